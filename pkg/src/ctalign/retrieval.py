"""Exhaustive cosine retrieval and prompt-based zero-shot classification.

Retrieval scans the full gallery (no approximate index): gallery sizes at
desk scale do not justify ANN structures, and exactness keeps results
oracle-checkable. Ties are broken toward the lower gallery index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import as_array, row_norms
from .errors import ConfigError, DegenerateInputError, ShapeMismatchError

logger = logging.getLogger(__name__)

DEFAULT_POSITIVE_TEMPLATE = "this is a chest CT with {} in lung"
DEFAULT_NEGATIVE_TEMPLATE = "this is a chest CT with no evident {} in lung"


@dataclass
class RetrievalResult:
    """Best gallery match for one query, plus the ranked top-k list."""

    query_index: int
    matched_index: int
    score: float
    top_k: list[tuple[int, float]] = field(default_factory=list)


@dataclass(frozen=True)
class PromptPair:
    """Positive/negative prompt templates for one disease entity."""

    entity: str = ""
    positive_template: str = DEFAULT_POSITIVE_TEMPLATE
    negative_template: str = DEFAULT_NEGATIVE_TEMPLATE


def retrieve(queries, gallery, k: int = 1) -> list[RetrievalResult]:
    """Match each query row to the gallery row with the highest cosine.

    Returns one result per query with the argmax match and the k best
    gallery entries sorted by descending score (ties to the lower index).
    """
    q = as_array(queries)
    g = as_array(gallery)
    if g.shape[0] == 0:
        raise ShapeMismatchError("gallery is empty")
    if q.shape[1] != g.shape[1]:
        raise ShapeMismatchError(
            f"query dim {q.shape[1]} does not match gallery dim {g.shape[1]}"
        )
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    qn = q / row_norms(q, "queries")[:, None]
    gn = g / row_norms(g, "gallery")[:, None]
    scores = qn @ gn.T
    k_eff = min(k, g.shape[0])
    results = []
    for i in range(q.shape[0]):
        row = scores[i]
        # stable sort on the negated scores keeps lower indices first on ties
        order = np.argsort(-row, kind="stable")[:k_eff]
        top = [(int(j), float(row[j])) for j in order]
        results.append(
            RetrievalResult(
                query_index=i,
                matched_index=top[0][0],
                score=top[0][1],
                top_k=top,
            )
        )
    return results


def zero_shot_probability(image_emb, pos_emb, neg_emb, t: float = 1.0) -> float:
    """Presence probability from the softmax over prompt similarities.

    p = exp(cos(img,pos)/t) / (exp(cos(img,pos)/t) + exp(cos(img,neg)/t));
    classify present when p > 0.5.
    """
    if t <= 0:
        raise ConfigError(f"temperature must be positive, got {t}")
    img = np.asarray(image_emb, dtype=np.float64).ravel()
    pos = np.asarray(pos_emb, dtype=np.float64).ravel()
    neg = np.asarray(neg_emb, dtype=np.float64).ravel()
    if not (img.shape == pos.shape == neg.shape):
        raise ShapeMismatchError(
            f"embedding dims differ: image {img.size}, pos {pos.size}, neg {neg.size}"
        )
    for name, v in (("image", img), ("positive prompt", pos), ("negative prompt", neg)):
        if np.linalg.norm(v) == 0.0:
            raise DegenerateInputError(f"{name} embedding has zero norm")
    img_u = img / np.linalg.norm(img)
    cos_pos = float(img_u @ (pos / np.linalg.norm(pos)))
    cos_neg = float(img_u @ (neg / np.linalg.norm(neg)))
    # stable two-way softmax
    return 1.0 / (1.0 + math.exp((cos_neg - cos_pos) / t))


def render_prompts(pair: PromptPair, entity: str) -> tuple[str, str]:
    """Substitute the entity into both templates."""
    for name, template in (
        ("positive", pair.positive_template),
        ("negative", pair.negative_template),
    ):
        if template.count("{}") != 1:
            raise ConfigError(
                f"{name} template must contain exactly one '{{}}' placeholder: {template!r}"
            )
    if entity == "":
        logger.warning("rendering prompts with an empty entity")
    return (
        pair.positive_template.format(entity),
        pair.negative_template.format(entity),
    )
