"""Evaluation harness: per-pathology precision/recall/F1 over labeler output,
and sentence-level generation metrics (BLEU-4, ROUGE-L, CIDEr-D-style,
simplified exact-match METEOR).

The METEOR variant matches unigrams exactly (no stemming or synonym tables),
so its absolute values are not comparable with resource-backed METEOR
implementations. CIDEr follows the CIDEr-D convention (Gaussian length
penalty, sigma=6, x10 scaling); output headers say so.

Division conventions: every 0/0 collapses to 0 and is flagged in the
returned structures, never silently.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

from .corpus import Corpus
from .errors import ShapeMismatchError
from .labeler import ENTITIES, KeywordTable, extract_labels

logger = logging.getLogger(__name__)

MACRO = "macro"


@dataclass
class ConfusionCounts:
    """Per-entity binary confusion counts with the reference as truth."""

    counts: dict[str, dict[str, int]] = field(
        default_factory=lambda: {
            e: {"tp": 0, "fp": 0, "fn": 0, "tn": 0} for e in ENTITIES
        }
    )

    def add(self, entity: str, generated: bool, reference: bool) -> None:
        cell = self.counts[entity]
        if generated and reference:
            cell["tp"] += 1
        elif generated and not reference:
            cell["fp"] += 1
        elif not generated and reference:
            cell["fn"] += 1
        else:
            cell["tn"] += 1

    def total(self, entity: str) -> int:
        return sum(self.counts[entity].values())


@dataclass(frozen=True)
class PrfRow:
    precision: float
    recall: float
    f1: float
    zero_division_flags: tuple[str, ...] = ()


@dataclass(frozen=True)
class NlpScores:
    bleu4: float
    rouge_l: float
    cider: float
    meteor: float


def _safe_div(num: float, den: float, flag: str, flags: list[str]) -> float:
    if den == 0.0:
        if num != 0.0:
            raise ShapeMismatchError(f"impossible ratio {num}/{den} for {flag}")
        flags.append(flag)
        return 0.0
    return num / den


def prf1(counts: ConfusionCounts) -> dict[str, PrfRow]:
    """Per-entity precision/recall/F1 plus the unweighted macro average."""
    rows: dict[str, PrfRow] = {}
    for entity in ENTITIES:
        c = counts.counts[entity]
        flags: list[str] = []
        p = _safe_div(c["tp"], c["tp"] + c["fp"], "precision", flags)
        r = _safe_div(c["tp"], c["tp"] + c["fn"], "recall", flags)
        f = _safe_div(2 * p * r, p + r, "f1", flags)
        rows[entity] = PrfRow(p, r, f, tuple(flags))
    rows[MACRO] = PrfRow(
        sum(rows[e].precision for e in ENTITIES) / len(ENTITIES),
        sum(rows[e].recall for e in ENTITIES) / len(ENTITIES),
        sum(rows[e].f1 for e in ENTITIES) / len(ENTITIES),
    )
    return rows


def eval_reports(
    generated: Corpus, reference: Corpus, table: KeywordTable | None = None
) -> tuple[ConfusionCounts, dict[str, PrfRow]]:
    """Label both corpora and accumulate confusion counts per entity."""
    gen_ids = set(generated.ids())
    ref_ids = set(reference.ids())
    if gen_ids != ref_ids:
        missing_gen = sorted(ref_ids - gen_ids)
        missing_ref = sorted(gen_ids - ref_ids)
        raise ShapeMismatchError(
            f"corpora not aligned by id: missing from generated {missing_gen}, "
            f"missing from reference {missing_ref}"
        )
    table = table or KeywordTable()
    counts = ConfusionCounts()
    for rec in reference:
        ref_labels = extract_labels(rec, table)
        gen_labels = extract_labels(generated[rec.id], table)
        for entity in ENTITIES:
            counts.add(entity, gen_labels.present[entity], ref_labels.present[entity])
    return counts, prf1(counts)


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate, reference) -> float:
    """Sentence BLEU-4: geometric mean of modified n-gram precisions with
    brevity penalty, no smoothing; any zero precision zeroes the score."""
    if len(candidate) == 0:
        logger.warning("BLEU-4 of empty candidate is 0")
        return 0.0
    log_sum = 0.0
    for n in range(1, 5):
        denom = len(candidate) - n + 1
        if denom <= 0:
            return 0.0
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        clipped = sum(min(c, ref[g]) for g, c in cand.items())
        if clipped == 0:
            return 0.0
        log_sum += math.log(clipped / denom)
    bp = 1.0 if len(candidate) >= len(reference) else math.exp(1.0 - len(reference) / len(candidate))
    return bp * math.exp(log_sum / 4.0)


def rouge_l(candidate, reference) -> float:
    """LCS-based F1."""
    if not candidate or not reference:
        return 0.0
    nc, nr = len(candidate), len(reference)
    table = [[0] * (nr + 1) for _ in range(nc + 1)]
    for i in range(1, nc + 1):
        row = table[i]
        prev = table[i - 1]
        ci = candidate[i - 1]
        for j in range(1, nr + 1):
            if ci == reference[j - 1]:
                row[j] = prev[j - 1] + 1
            else:
                row[j] = max(prev[j], row[j - 1])
    lcs = table[nc][nr]
    if lcs == 0:
        return 0.0
    p = lcs / nc
    r = lcs / nr
    return 2 * p * r / (p + r)


@dataclass
class CorpusNgramStats:
    """Document frequencies of 1..4-grams over a reference corpus."""

    num_docs: int
    df: dict[tuple, int]

    @classmethod
    def from_token_lists(cls, docs) -> "CorpusNgramStats":
        df: dict[tuple, int] = {}
        for doc in docs:
            seen = set()
            for n in range(1, 5):
                seen.update(_ngrams(doc, n))
            for g in seen:
                df[g] = df.get(g, 0) + 1
        return cls(num_docs=len(docs), df=df)

    @classmethod
    def from_corpus(cls, corpus: Corpus) -> "CorpusNgramStats":
        return cls.from_token_lists([[t.text for t in rec.tokens] for rec in corpus])

    def idf(self, gram: tuple) -> float:
        if self.num_docs < 1:
            return 0.0
        return math.log(self.num_docs / max(1.0, self.df.get(gram, 0)))


def cider(candidate, references, stats: CorpusNgramStats, sigma: float = 6.0) -> float:
    """CIDEr-D-style score: per-n tf-idf cosine against each reference with a
    Gaussian length penalty, averaged over n and references, x10."""
    if stats.num_docs < 2:
        logger.warning(
            "CIDEr idf degenerates with %d reference document(s); score computed anyway",
            stats.num_docs,
        )
    total = 0.0
    for ref in references:
        penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2.0 * sigma**2))
        acc = 0.0
        for n in range(1, 5):
            cand_vec = {g: c * stats.idf(g) for g, c in _ngrams(candidate, n).items()}
            ref_vec = {g: c * stats.idf(g) for g, c in _ngrams(ref, n).items()}
            norm_c = math.sqrt(sum(w * w for w in cand_vec.values()))
            norm_r = math.sqrt(sum(w * w for w in ref_vec.values()))
            if norm_c == 0.0 or norm_r == 0.0:
                continue
            dot = sum(w * ref_vec.get(g, 0.0) for g, w in cand_vec.items())
            acc += penalty * dot / (norm_c * norm_r)
        total += acc / 4.0
    return 10.0 * total / len(references)


_METEOR_SEARCH_BUDGET = 200_000


def meteor_simple(candidate, reference) -> float:
    """Exact-match unigram METEOR: maximize matches, then minimize chunks.

    Chunk minimization is an exact search with memoization; on highly
    repetitive inputs that exceed the search budget it falls back to the
    deterministic leftmost-first alignment.
    """
    candidate = list(candidate)
    reference = list(reference)
    cand_counts = Counter(candidate)
    ref_counts = Counter(reference)
    m = sum(min(c, ref_counts[w]) for w, c in cand_counts.items())
    if m == 0:
        return 0.0
    chunks = _min_chunks(candidate, reference, m)
    p = m / len(candidate)
    r = m / len(reference)
    fmean = 10.0 * p * r / (r + 9.0 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return fmean * (1.0 - penalty)


def _min_chunks(candidate, reference, m: int) -> int:
    quota = {
        w: min(c, Counter(reference)[w]) for w, c in Counter(candidate).items()
    }
    ref_positions: dict[str, list[int]] = {}
    for j, w in enumerate(reference):
        ref_positions.setdefault(w, []).append(j)

    suffix_counts: list[Counter] = [Counter() for _ in range(len(candidate) + 1)]
    for i in range(len(candidate) - 1, -1, -1):
        suffix_counts[i] = suffix_counts[i + 1].copy()
        suffix_counts[i][candidate[i]] += 1

    word_index = {w: i for i, w in enumerate(quota)}
    need0 = tuple(quota[w] for w in word_index)

    best = [None]
    nodes = [0]
    memo: dict[tuple, int] = {}

    def search(ci: int, prev_j: int, used: frozenset, need: tuple, links: int) -> None:
        nodes[0] += 1
        if nodes[0] > _METEOR_SEARCH_BUDGET:
            return
        remaining = sum(need)
        if best[0] is not None and links + remaining <= best[0]:
            return
        if ci == len(candidate):
            if remaining == 0 and (best[0] is None or links > best[0]):
                best[0] = links
            return
        key = (ci, prev_j, used)
        prev_links = memo.get(key)
        if prev_links is not None and prev_links >= links:
            return
        memo[key] = links

        w = candidate[ci]
        widx = word_index.get(w)
        # option: match this token to an unused reference occurrence
        if widx is not None and need[widx] > 0:
            for j in ref_positions[w]:
                if j in used:
                    continue
                new_need = list(need)
                new_need[widx] -= 1
                search(
                    ci + 1,
                    j,
                    used | {j},
                    tuple(new_need),
                    links + (1 if prev_j == j - 1 else 0),
                )
        # option: skip, if quota can still be met by later occurrences
        if widx is None or suffix_counts[ci + 1][w] >= need[widx]:
            search(ci + 1, -2, used, need, links)

    search(0, -2, frozenset(), need0, 0)

    if best[0] is None:
        return _greedy_chunks(candidate, reference)
    return m - best[0]


def _greedy_chunks(candidate, reference) -> int:
    """Leftmost-first alignment; used only past the exact-search budget."""
    used = set()
    pairs = []
    ref_positions: dict[str, list[int]] = {}
    for j, w in enumerate(reference):
        ref_positions.setdefault(w, []).append(j)
    for i, w in enumerate(candidate):
        for j in ref_positions.get(w, []):
            if j not in used:
                used.add(j)
                pairs.append((i, j))
                break
    pairset = set(pairs)
    return sum(1 for (i, j) in pairs if (i - 1, j - 1) not in pairset)


def eval_nlp(
    generated: Corpus, reference: Corpus
) -> tuple[NlpScores, dict[str, NlpScores], CorpusNgramStats]:
    """Mean generation metrics over id-aligned corpora, plus per-report rows."""
    gen_ids = set(generated.ids())
    ref_ids = set(reference.ids())
    if gen_ids != ref_ids:
        raise ShapeMismatchError(
            f"corpora not aligned by id: missing from generated {sorted(ref_ids - gen_ids)}, "
            f"missing from reference {sorted(gen_ids - ref_ids)}"
        )
    stats = CorpusNgramStats.from_corpus(reference)
    per_report: dict[str, NlpScores] = {}
    sums = [0.0, 0.0, 0.0, 0.0]
    for rec in reference:
        ref_tokens = [t.text for t in rec.tokens]
        cand_tokens = [t.text for t in generated[rec.id].tokens]
        scores = NlpScores(
            bleu4=bleu4(cand_tokens, ref_tokens),
            rouge_l=rouge_l(cand_tokens, ref_tokens),
            cider=cider(cand_tokens, [ref_tokens], stats),
            meteor=meteor_simple(cand_tokens, ref_tokens),
        )
        per_report[rec.id] = scores
        sums[0] += scores.bleu4
        sums[1] += scores.rouge_l
        sums[2] += scores.cider
        sums[3] += scores.meteor
    n = max(1, len(reference))
    mean = NlpScores(sums[0] / n, sums[1] / n, sums[2] / n, sums[3] / n)
    return mean, per_report, stats
