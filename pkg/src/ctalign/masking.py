"""Entity-focused mask planning over tokenized reports.

Entity/attribute phrases are masked as whole units so surviving context
cannot leak the masked word ("solid" next to a masked "nodule" would give it
away), blended with plain random masking of the remaining tokens. Plans are
driven by the portable xoshiro256** generator, so a (tokens, lexicon, rates,
seed) tuple produces the same plan on every platform.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass

from .errors import ConfigError, ShapeMismatchError
from .rng import Xoshiro256StarStar

_SIZE_TOKEN_RE = re.compile(r"^\d+(\.\d+)?(mm|cm|m)$|^\d+(\.\d+)?$")

DEFAULT_ENTITY_WORDS = frozenset(
    {
        "nodule",
        "nodules",
        "nodular",
        "opacity",
        "opacities",
        "infiltrate",
        "infiltration",
        "effusion",
        "emphysema",
        "inflammation",
        "pneumonia",
        "infection",
        "infectious",
        "calcification",
        "calcifications",
        "scar",
        "scarring",
        "reticulation",
        "lesion",
    }
)

DEFAULT_ATTRIBUTE_WORDS = frozenset(
    {
        "left",
        "right",
        "upper",
        "lower",
        "middle",
        "lobe",
        "lobes",
        "lung",
        "lungs",
        "bilateral",
        "pleural",
        "solid",
        "ground",
        "glass",
        "small",
        "large",
        "multiple",
        "scattered",
        "patchy",
        "diffuse",
    }
)

DEFAULT_RATES = (0.5, 0.15, 0.30)  # entity_rate, random_rate, max_mask_fraction
MASK_SYMBOL = "[MASK]"


@dataclass(frozen=True)
class PhraseLexicon:
    """Word sets that define entity/attribute phrases.

    Size expressions (number, or number+unit like "5mm") count as attributes
    so "5mm 6mm nodule" masks as one phrase.
    """

    entities: frozenset[str] = DEFAULT_ENTITY_WORDS
    attributes: frozenset[str] = DEFAULT_ATTRIBUTE_WORDS

    def __post_init__(self):
        if not self.entities:
            raise ConfigError("phrase lexicon needs at least one entity word")
        for word in list(self.entities) + list(self.attributes):
            if word != word.lower():
                raise ConfigError(f"lexicon words must be lowercase: {word!r}")

    def is_entity(self, token_text: str) -> bool:
        return token_text in self.entities

    def is_member(self, token_text: str) -> bool:
        return (
            token_text in self.entities
            or token_text in self.attributes
            or bool(_SIZE_TOKEN_RE.match(token_text))
        )

    @classmethod
    def from_json(cls, path) -> "PhraseLexicon":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        return cls(
            entities=frozenset(obj.get("entities", [])),
            attributes=frozenset(obj.get("attributes", [])),
        )


@dataclass
class MaskPlan:
    """Which token spans to mask, how each was selected, and under what knobs."""

    masked_spans: list[tuple[int, int]]
    strategy_tags: list[str]
    seed: int
    rates: tuple[float, float, float]
    token_count: int = 0

    def __post_init__(self):
        if len(self.masked_spans) != len(self.strategy_tags):
            raise ShapeMismatchError("each masked span needs exactly one strategy tag")
        prev_end = -1
        for start, end in self.masked_spans:
            if start >= end:
                raise ShapeMismatchError(f"empty or inverted span ({start}, {end})")
            if start < prev_end:
                raise ShapeMismatchError("masked spans must be sorted and non-overlapping")
            prev_end = end

    def masked_token_count(self) -> int:
        return sum(end - start for start, end in self.masked_spans)

    def masked_indices(self) -> set[int]:
        out: set[int] = set()
        for start, end in self.masked_spans:
            out.update(range(start, end))
        return out


def _token_texts(tokens) -> list[str]:
    return [t if isinstance(t, str) else t.text for t in tokens]


def find_phrases(tokens, lexicon: PhraseLexicon | None = None) -> list[tuple[int, int]]:
    """Maximal runs of lexicon tokens that contain at least one entity token."""
    lexicon = lexicon or PhraseLexicon()
    texts = _token_texts(tokens)
    phrases = []
    i = 0
    n = len(texts)
    while i < n:
        if not lexicon.is_member(texts[i]):
            i += 1
            continue
        j = i
        has_entity = False
        while j < n and lexicon.is_member(texts[j]):
            has_entity = has_entity or lexicon.is_entity(texts[j])
            j += 1
        if has_entity:
            phrases.append((i, j))
        i = j
    return phrases


def plan_mask(
    tokens,
    lexicon: PhraseLexicon | None = None,
    rates: tuple[float, float, float] = DEFAULT_RATES,
    seed: int = 0,
) -> MaskPlan:
    """Deterministic mask plan for one token stream.

    Selection order is fixed: one uniform draw per phrase (mask the whole
    phrase with probability entity_rate), then one draw per non-phrase token
    (probability random_rate). If the ceil(max_mask_fraction * n) budget is
    exceeded, random spans are dropped first, then phrases, both from the
    highest position downward.
    """
    entity_rate, random_rate, max_fraction = rates
    if not (0.0 <= entity_rate <= 1.0 and 0.0 <= random_rate <= 1.0):
        raise ConfigError(f"rates must lie in [0, 1], got {rates}")
    if not (0.0 < max_fraction <= 1.0):
        raise ConfigError(f"max_mask_fraction must lie in (0, 1], got {max_fraction}")

    lexicon = lexicon or PhraseLexicon()
    texts = _token_texts(tokens)
    n = len(texts)
    rng = Xoshiro256StarStar(seed)

    phrases = find_phrases(texts, lexicon)
    in_phrase = set()
    for start, end in phrases:
        in_phrase.update(range(start, end))

    selected: list[tuple[tuple[int, int], str]] = []
    for span in phrases:
        if rng.random() < entity_rate:
            selected.append((span, "entity_phrase"))
    for i in range(n):
        if i in in_phrase:
            continue
        if rng.random() < random_rate:
            selected.append(((i, i + 1), "random"))

    budget = _ceil_fraction(max_fraction, n)
    total = sum(end - start for (start, end), _ in selected)
    if total > budget:
        randoms = sorted(
            (s for s in selected if s[1] == "random"), key=lambda s: s[0][0], reverse=True
        )
        phrases_sel = sorted(
            (s for s in selected if s[1] == "entity_phrase"),
            key=lambda s: s[0][0],
            reverse=True,
        )
        for item in randoms + phrases_sel:
            if total <= budget:
                break
            selected.remove(item)
            total -= item[0][1] - item[0][0]

    selected.sort(key=lambda s: s[0][0])
    return MaskPlan(
        masked_spans=[span for span, _ in selected],
        strategy_tags=[tag for _, tag in selected],
        seed=seed,
        rates=rates,
        token_count=n,
    )


def _ceil_fraction(fraction: float, n: int) -> int:
    """ceil(fraction * n) computed so that 0.3 * 10 gives exactly 3."""
    product = fraction * n
    nearest = round(product)
    if abs(product - nearest) < 1e-9:
        return int(nearest)
    return int(math.ceil(product))


def apply_mask(tokens, plan: MaskPlan, mask_symbol: str = MASK_SYMBOL) -> list[str]:
    """Replace planned spans with the mask symbol; length is preserved."""
    texts = _token_texts(tokens)
    out = list(texts)
    for start, end in plan.masked_spans:
        if start < 0 or end > len(out):
            raise ShapeMismatchError(
                f"masked span ({start}, {end}) out of range for {len(out)} tokens"
            )
        for i in range(start, end):
            out[i] = mask_symbol
    return out
