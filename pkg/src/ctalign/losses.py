"""Training objectives: robust contrastive loss with false-negative-corrected
positive sets, its InfoNCE special case, and the dual distillation loss
(pairwise residual + relation-matrix residual).

All losses return the scalar value together with analytic gradients for
every input matrix. Log-sum-exp terms are computed with max subtraction, so
temperatures down to 0.01 stay finite.

Positive-set construction rules:
  1. reports whose conclusions carry a health key phrase are mutually
     positive (fixed-content healthy reports describe the same state);
  2. two non-healthy reports are mutually positive only when their
     normalized texts are byte-identical - near-duplicates that differ in a
     single size or location token stay negatives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import ReportRecord, normalize_text
from .embeddings import as_array, relation_values, row_norms
from .errors import ConfigError, ShapeMismatchError
from .labeler import is_healthy_report


@dataclass(frozen=True)
class PositiveSetMap:
    """Per-sample positive index sets over a batch of n pairs."""

    n: int
    sets: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(self.sets) != self.n:
            raise ShapeMismatchError(
                f"positive map has {len(self.sets)} sets for batch of {self.n}"
            )
        for i, s in enumerate(self.sets):
            if i not in s:
                raise ConfigError(f"positive set {i} must contain its own index")
            if any(j < 0 or j >= self.n for j in s):
                raise ConfigError(f"positive set {i} has out-of-range indices: {s}")
            if tuple(sorted(set(s))) != s:
                raise ConfigError(f"positive set {i} must be sorted and duplicate-free: {s}")

    @classmethod
    def singletons(cls, n: int) -> "PositiveSetMap":
        return cls(n=n, sets=tuple((i,) for i in range(n)))

    @classmethod
    def from_lists(cls, sets) -> "PositiveSetMap":
        return cls(n=len(sets), sets=tuple(tuple(sorted(set(s))) for s in sets))

    def indicator(self) -> np.ndarray:
        """n x n soft-target matrix: row i holds 1/|P_i| on members of P_i."""
        y = np.zeros((self.n, self.n))
        for i, s in enumerate(self.sets):
            y[i, list(s)] = 1.0 / len(s)
        return y


@dataclass
class LossValue:
    """Scalar objective plus analytic gradients keyed by input name."""

    value: float
    gradients: dict[str, np.ndarray]


def build_positive_sets(batch: list[ReportRecord]) -> PositiveSetMap:
    """Correct false negatives inside one batch of reports."""
    n = len(batch)
    healthy = [is_healthy_report(r) for r in batch]
    normalized = [normalize_text(r.raw_text) for r in batch]
    sets = []
    for i in range(n):
        members = {i}
        for j in range(n):
            if j == i:
                continue
            if healthy[i] and healthy[j]:
                members.add(j)
            elif not healthy[i] and not healthy[j] and normalized[i] == normalized[j]:
                members.add(j)
        sets.append(tuple(sorted(members)))
    return PositiveSetMap(n=n, sets=tuple(sets))


def _log_softmax_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise (log softmax, softmax) with max subtraction."""
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    return shifted - np.log(total), exp / total


def roco_loss(
    img, txt, positives: PositiveSetMap, t: float = 0.07, symmetric: bool = False
) -> LossValue:
    """Robust contrastive loss over cosine similarities.

    L = -(1/n) sum_i (1/|P_i|) sum_{j in P_i} log softmax_j(cos(I_i, T_.)/t),
    i.e. cross-entropy against the uniform distribution over each positive
    set, image-to-text direction. With `symmetric` the text-to-image
    direction is averaged in; that requires a symmetric positive map (the
    health-rule builder always produces one).
    """
    if t <= 0:
        raise ConfigError(f"temperature must be positive, got {t}")
    if symmetric:
        for i, s in enumerate(positives.sets):
            for j in s:
                if i not in positives.sets[j]:
                    raise ConfigError(
                        f"symmetric mode needs a symmetric positive map, but {j} in P_{i} "
                        f"while {i} not in P_{j}"
                    )
        fwd = roco_loss(img, txt, positives, t)
        rev = roco_loss(txt, img, positives, t)
        return LossValue(
            value=(fwd.value + rev.value) / 2.0,
            gradients={
                "img": (fwd.gradients["img"] + rev.gradients["txt"]) / 2.0,
                "txt": (fwd.gradients["txt"] + rev.gradients["img"]) / 2.0,
            },
        )
    im = as_array(img)
    tx = as_array(txt)
    if im.shape != tx.shape:
        raise ShapeMismatchError(f"image {im.shape} and text {tx.shape} shapes differ")
    n = im.shape[0]
    if n == 0:
        raise ShapeMismatchError("empty batch")
    if positives.n != n:
        raise ShapeMismatchError(f"positive map covers {positives.n} samples, batch has {n}")

    img_norms = row_norms(im, "image")
    txt_norms = row_norms(tx, "text")
    u = im / img_norms[:, None]
    v = tx / txt_norms[:, None]
    sims = u @ v.T
    log_q, q = _log_softmax_rows(sims / t)
    y = positives.indicator()

    value = float(-(y * log_q).sum() / n)

    # d(value)/d(sims) for cross-entropy with soft targets
    g = (q - y) / (n * t)
    row_dot = (g * sims).sum(axis=1, keepdims=True)
    grad_img = (g @ v - row_dot * u) / img_norms[:, None]
    col_dot = (g * sims).sum(axis=0)[:, None]
    grad_txt = (g.T @ u - col_dot * v) / txt_norms[:, None]
    return LossValue(value=value, gradients={"img": grad_img, "txt": grad_txt})


def infonce_loss(img, txt, t: float = 0.07) -> LossValue:
    """Standard contrastive loss: each pair is its own only positive."""
    n = as_array(img).shape[0]
    return roco_loss(img, txt, PositiveSetMap.singletons(n), t)


def distill_loss(student, teacher, reduction: str = "sum") -> LossValue:
    """Dual distillation: pairwise embedding residual plus relation residual.

    L = R((student - teacher)^2) + R((rel(student) - rel(teacher))^2) with R
    the sum or mean of elementwise squares. The teacher is frozen, so its
    gradient is identically zero.
    """
    if reduction not in ("sum", "mean"):
        raise ConfigError(f"reduction must be 'sum' or 'mean', got {reduction!r}")
    s = as_array(student)
    te = as_array(teacher)
    if s.shape != te.shape:
        raise ShapeMismatchError(f"student {s.shape} and teacher {te.shape} shapes differ")
    m, d = s.shape

    norms = row_norms(s, "student")
    row_norms(te, "teacher")
    diff = s - te
    rel_s = relation_values(s, "student")
    rel_t = relation_values(te, "teacher")
    rel_diff = rel_s - rel_t

    if reduction == "sum":
        pair_scale = 1.0
        rel_scale = 1.0
    else:
        pair_scale = 1.0 / (m * d)
        rel_scale = 1.0 / (m * m)

    value = float(pair_scale * (diff**2).sum() + rel_scale * (rel_diff**2).sum())

    grad = 2.0 * pair_scale * diff
    # relation term: w = dL/d(rel_s) is symmetric, and the unit diagonal of
    # rel_s is constant, so each row's contribution folds to one matmul
    w = 2.0 * rel_scale * rel_diff
    unit = s / norms[:, None]
    row_dot = (w * rel_s).sum(axis=1, keepdims=True)
    grad += 2.0 * (w @ unit - row_dot * unit) / norms[:, None]
    return LossValue(
        value=value,
        gradients={"student": grad, "teacher": np.zeros_like(te)},
    )
