"""Report corpus handling: JSONL ingestion, text normalization, tokenization,
sentence splitting, and conclusion-section resolution.

The tokenizer is a lowercase word tokenizer: tokens are maximal runs of ASCII
letters and digits, so "5mm×6mm" yields ["5mm", "6mm"] and punctuation is
dropped. Entity masking and keyword labeling operate on these word-level
units; a subword tokenizer can be slotted in by producing the same Token
records from another source.

Corpus file format: UTF-8 JSON object per line with fields
{id: string, text: string, findings?: string, conclusion?: string}.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import CorpusFormatError

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+")
_WS_RE = re.compile(r"\s+")
_SENTENCE_SEP = re.compile(r"[.;]")

DEFAULT_CONCLUSION_MARKERS = ("impression:", "conclusion:")


@dataclass(frozen=True)
class Token:
    """A lowercased word with its [start, end) offsets into the source text."""

    text: str
    start: int
    end: int


def tokenize(text: str) -> list[Token]:
    """Deterministic lowercase tokenization on whitespace/punctuation boundaries."""
    return [
        Token(m.group(0).lower(), m.start(), m.end()) for m in _TOKEN_RE.finditer(text)
    ]


def normalize_text(text: str) -> str:
    """Canonical form for content-identity checks.

    Lowercases, collapses whitespace runs to single spaces, trims the ends,
    and strips trailing periods. Idempotent.
    """
    out = _WS_RE.sub(" ", text.lower()).strip()
    return out.rstrip(". ").lstrip(" ")


@dataclass
class ReportRecord:
    """One radiology report with its deterministic token stream."""

    id: str
    raw_text: str
    findings: str = ""
    conclusion: str = ""
    tokens: list[Token] = field(default_factory=list)

    def __post_init__(self):
        if not self.id:
            raise CorpusFormatError("record id must be nonempty", line=0)
        if not self.tokens:
            self.tokens = tokenize(self.raw_text)


def conclusion_text(record: ReportRecord, markers=DEFAULT_CONCLUSION_MARKERS) -> str:
    """The conclusion section of a report.

    Uses the explicit field when present; otherwise the text after the last
    marker occurrence (case-insensitive); otherwise the whole text.
    """
    if record.conclusion:
        return record.conclusion
    lowered = record.raw_text.lower()
    best = -1
    for marker in markers:
        pos = lowered.rfind(marker)
        if pos >= 0:
            best = max(best, pos + len(marker))
    if best >= 0:
        return record.raw_text[best:]
    return record.raw_text


def sentence_token_groups(record: ReportRecord) -> list[list[Token]]:
    """Tokens grouped into sentences, split on '.' and ';' in the raw text."""
    boundaries = [m.start() for m in _SENTENCE_SEP.finditer(record.raw_text)]
    boundaries.append(len(record.raw_text))
    groups: list[list[Token]] = []
    current: list[Token] = []
    bi = 0
    for tok in record.tokens:
        while bi < len(boundaries) - 1 and tok.start > boundaries[bi]:
            if current:
                groups.append(current)
                current = []
            bi += 1
        current.append(tok)
    if current:
        groups.append(current)
    return groups


class Corpus:
    """Ordered, id-indexed collection of reports."""

    def __init__(self, records: list[ReportRecord]):
        self.records = list(records)
        self.index: dict[str, int] = {}
        for pos, rec in enumerate(self.records):
            if rec.id in self.index:
                raise CorpusFormatError(f"duplicate id {rec.id!r}", line=pos + 1)
            self.index[rec.id] = pos

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, report_id: str) -> ReportRecord:
        return self.records[self.index[report_id]]

    def ids(self) -> list[str]:
        return [r.id for r in self.records]


def load_corpus(path) -> Corpus:
    """Read a JSONL corpus file; errors cite the 1-based line number."""
    records: list[ReportRecord] = []
    seen: dict[str, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusFormatError(f"invalid JSON: {exc.msg}", line=lineno) from exc
            if not isinstance(obj, dict):
                raise CorpusFormatError("record must be a JSON object", line=lineno)
            rid = obj.get("id")
            text = obj.get("text")
            if not isinstance(rid, str) or not rid:
                raise CorpusFormatError("missing or empty 'id' field", line=lineno)
            if not isinstance(text, str):
                raise CorpusFormatError("missing 'text' field", line=lineno)
            if rid in seen:
                raise CorpusFormatError(
                    f"duplicate id {rid!r} (first seen on line {seen[rid]})", line=lineno
                )
            seen[rid] = lineno
            records.append(
                ReportRecord(
                    id=rid,
                    raw_text=text,
                    findings=obj.get("findings", "") or "",
                    conclusion=obj.get("conclusion", "") or "",
                )
            )
    return Corpus(records)


def write_corpus(corpus: Corpus, path) -> None:
    """Write JSONL; optional sections are emitted only when nonempty."""
    with open(path, "w", encoding="utf-8") as fh:
        for rec in corpus:
            obj: dict[str, str] = {"id": rec.id, "text": rec.raw_text}
            if rec.findings:
                obj["findings"] = rec.findings
            if rec.conclusion:
                obj["conclusion"] = rec.conclusion
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
