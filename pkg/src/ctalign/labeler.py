"""Rule-based pathology labeler for chest CT reports.

Keyword matching is whole-token and case-insensitive: keywords are tokenized
with the corpus tokenizer, so "nodular" only matches via its own entry and
hyphen/space variants of the same phrase collapse to the same token sequence.
Negation is sentence-scoped: a cue before the match negates it unless a
scope-breaking token sits between cue and match.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .corpus import ReportRecord, conclusion_text, normalize_text, sentence_token_groups, tokenize
from .errors import ConfigError

ENTITIES = (
    "nodule",
    "opacity",
    "pleural_effusion",
    "emphysema",
    "inflammation",
    "calcification",
)

DEFAULT_KEYWORDS: dict[str, tuple[str, ...]] = {
    "nodule": ("nodule", "nodules", "nodular"),
    "opacity": (
        "opacity",
        "opacities",
        "decreased translucency",
        "increased density",
        "airspace disease",
        "air-space disease",
        "air space disease",
        "infiltrate",
        "infiltration",
        "interstitial marking",
        "interstitial pattern",
        "interstitial lung",
        "reticular pattern",
        "reticular marking",
        "reticulation",
        "parenchymal scarring",
        "peribronchial thickening",
        "wall thickening",
        "scar",
    ),
    "pleural_effusion": ("pleural fluid", "pleural effusion"),
    "emphysema": ("emphysema",),
    "inflammation": ("inflammation", "pneumonia", "infection", "infectious process", "infectious"),
    "calcification": ("calcification", "calcifications"),
}

DEFAULT_NEGATION_CUES = ("no", "without", "no evident", "free of", "negative for")
DEFAULT_SCOPE_BREAKERS = ("but", "however")
DEFAULT_HEALTH_PHRASES = ("show no obvious abnormality", "show no active lesion")


class KeywordTable:
    """Entity -> keyword list, with keyword token sequences precomputed."""

    def __init__(self, keywords: dict[str, tuple[str, ...]] | None = None):
        keywords = dict(keywords or DEFAULT_KEYWORDS)
        missing = [e for e in ENTITIES if e not in keywords]
        if missing:
            raise ConfigError(f"keyword table is missing entities: {missing}")
        unknown = [e for e in keywords if e not in ENTITIES]
        if unknown:
            raise ConfigError(f"keyword table has unknown entities: {unknown}")
        self.keywords: dict[str, tuple[str, ...]] = {}
        self.token_seqs: dict[str, list[tuple[str, tuple[str, ...]]]] = {}
        for entity in ENTITIES:
            words = tuple(k.lower() for k in keywords[entity])
            if not words:
                raise ConfigError(f"entity {entity!r} has no keywords")
            self.keywords[entity] = words
            seqs = []
            for kw in words:
                seq = tuple(t.text for t in tokenize(kw))
                if not seq:
                    raise ConfigError(f"keyword {kw!r} has no tokens")
                seqs.append((kw, seq))
            self.token_seqs[entity] = seqs

    @classmethod
    def from_json(cls, path) -> "KeywordTable":
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
        if not isinstance(obj, dict):
            raise ConfigError("keyword file must map entity -> list of keywords")
        return cls({k: tuple(v) for k, v in obj.items()})

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({e: list(self.keywords[e]) for e in ENTITIES}, fh, indent=2)
            fh.write("\n")


@dataclass
class PathologyLabels:
    """Six-way presence labels with per-entity evidence spans.

    Evidence holds un-negated matches only, as (keyword, (start, end)) char
    spans into the report text.
    """

    present: dict[str, bool] = field(default_factory=lambda: {e: False for e in ENTITIES})
    evidence: dict[str, list[tuple[str, tuple[int, int]]]] = field(
        default_factory=lambda: {e: [] for e in ENTITIES}
    )

    def vector(self) -> list[int]:
        return [int(self.present[e]) for e in ENTITIES]


def _find_cue_positions(tokens, cues):
    """End positions (exclusive) of cue matches in a sentence token list."""
    texts = [t.text for t in tokens]
    ends = []
    for cue in cues:
        seq = tuple(t.text for t in tokenize(cue))
        n = len(seq)
        for p in range(len(texts) - n + 1):
            if tuple(texts[p : p + n]) == seq:
                ends.append(p + n)
    return ends


def is_negated(
    match_start: int,
    sentence_tokens,
    cues=DEFAULT_NEGATION_CUES,
    scope_breakers=DEFAULT_SCOPE_BREAKERS,
) -> bool:
    """Whether a keyword match starting at a sentence token index is negated.

    True iff some cue ends at or before the match with no scope breaker
    between cue end and match start.
    """
    breakers = set(scope_breakers)
    texts = [t.text for t in sentence_tokens]
    for end in _find_cue_positions(sentence_tokens, cues):
        if end > match_start:
            continue
        if not any(texts[i] in breakers for i in range(end, match_start)):
            return True
    return False


def extract_labels(
    record: ReportRecord,
    table: KeywordTable | None = None,
    cues=DEFAULT_NEGATION_CUES,
    scope_breakers=DEFAULT_SCOPE_BREAKERS,
) -> PathologyLabels:
    """Label one report: an entity is present iff some keyword matches as a
    whole-token sequence in some sentence and that match is not negated."""
    table = table or KeywordTable()
    labels = PathologyLabels()
    for sentence in sentence_token_groups(record):
        texts = [t.text for t in sentence]
        for entity in ENTITIES:
            for keyword, seq in table.token_seqs[entity]:
                n = len(seq)
                for p in range(len(texts) - n + 1):
                    if tuple(texts[p : p + n]) != seq:
                        continue
                    if is_negated(p, sentence, cues, scope_breakers):
                        continue
                    span = (sentence[p].start, sentence[p + n - 1].end)
                    labels.evidence[entity].append((keyword, span))
                    labels.present[entity] = True
    return labels


def is_healthy_report(
    record: ReportRecord,
    phrases=DEFAULT_HEALTH_PHRASES,
    markers=None,
) -> bool:
    """Whether the report's conclusion contains a health key phrase."""
    if markers is None:
        conclusion = conclusion_text(record)
    else:
        conclusion = conclusion_text(record, markers)
    normalized = normalize_text(conclusion)
    return any(normalize_text(p) in normalized for p in phrases)
