"""Caption evaluation: corpus CIDEr-D, METEOR-lite, 4-gram repetition,
and a bag-of-tokens consistency score between two predictions."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

Tokens = Sequence[str]


def _ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def cider_corpus(
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
    sigma: float = 6.0,
    n_max: int = 4,
) -> tuple[float, list[float]]:
    """Corpus CIDEr-D (x10 scale) with one reference per candidate.

    Document frequencies come from the reference side; IDF is
    log(corpus_size / (1 + df)).  Candidate n-gram counts are clipped at
    the reference counts in the similarity numerator, and a Gaussian
    penalty on the length difference is applied per n.
    """
    if len(candidates) != len(references):
        raise ValueError("candidates and references must pair up")
    n_docs = len(references)
    if n_docs < 2:
        raise ValueError("CIDEr document frequency needs a corpus of size >= 2")

    df: list[Counter] = [Counter() for _ in range(n_max)]
    ref_counts = []
    for ref in references:
        per_n = [_ngram_counts(ref, n + 1) for n in range(n_max)]
        ref_counts.append(per_n)
        for n in range(n_max):
            for gram in per_n[n]:
                df[n][gram] += 1

    def idf(n: int, gram: tuple) -> float:
        return math.log(n_docs / (1.0 + df[n][gram]))

    per_instance = []
    for cand, ref, ref_per_n in zip(candidates, references, ref_counts):
        score = 0.0
        delta = len(cand) - len(ref)
        penalty = math.exp(-(delta**2) / (2.0 * sigma**2))
        for n in range(n_max):
            cand_n = _ngram_counts(cand, n + 1)
            ref_n = ref_per_n[n]
            num = 0.0
            for gram, count in cand_n.items():
                num += min(count, ref_n[gram]) * ref_n[gram] * idf(n, gram) ** 2
            norm_c = math.sqrt(sum((c * idf(n, g)) ** 2 for g, c in cand_n.items()))
            norm_r = math.sqrt(sum((c * idf(n, g)) ** 2 for g, c in ref_n.items()))
            if norm_c > 0 and norm_r > 0:
                score += penalty * num / (norm_c * norm_r)
        per_instance.append(10.0 * score / n_max)
    corpus = sum(per_instance) / n_docs
    return corpus, per_instance


def _chunk_count(pairs: list[tuple[int, int]]) -> int:
    """Chunks in an alignment given as (cand_pos, ref_pos) pairs."""
    if not pairs:
        return 0
    pairs = sorted(pairs)
    chunks = 1
    for (c0, r0), (c1, r1) in zip(pairs, pairs[1:]):
        if c1 != c0 + 1 or r1 != r0 + 1:
            chunks += 1
    return chunks


def _align_greedy(candidate: Tokens, reference: Tokens, need: dict[str, int]) -> list[tuple[int, int]]:
    """Left-to-right matching preferring the slot that extends the current
    chunk, else the leftmost unused slot."""
    ref_positions: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        ref_positions.setdefault(tok, []).append(j)
    used: set[int] = set()
    budget = dict(need)
    pairs: list[tuple[int, int]] = []
    prev_ref = None
    for i, tok in enumerate(candidate):
        if budget.get(tok, 0) <= 0:
            prev_ref = None
            continue
        slots = [j for j in ref_positions.get(tok, []) if j not in used]
        if not slots:
            prev_ref = None
            continue
        j = prev_ref + 1 if prev_ref is not None and prev_ref + 1 in slots else slots[0]
        pairs.append((i, j))
        used.add(j)
        budget[tok] -= 1
        prev_ref = j
    return pairs


def _align_exact(candidate: Tokens, reference: Tokens) -> tuple[int, int]:
    """Maximal one-to-one exact alignment; returns (matches, chunks).

    Chunk count is minimized by a budgeted branch-and-bound over the
    duplicate-token assignments; if the search budget is exhausted the
    contiguity-greedy alignment is used instead.  Ties resolve leftmost
    because slots are explored in ascending reference order.
    """
    cand_counts = Counter(candidate)
    ref_counts = Counter(reference)
    need = {t: min(c, ref_counts[t]) for t, c in cand_counts.items() if ref_counts[t]}
    m = sum(need.values())
    if m == 0:
        return 0, 0

    ref_positions: dict[str, list[int]] = {}
    for j, tok in enumerate(reference):
        ref_positions.setdefault(tok, []).append(j)

    greedy_pairs = _align_greedy(candidate, reference, need)
    best = [_chunk_count(greedy_pairs)] if len(greedy_pairs) == m else [m]

    remaining_after = {t: [0] * (len(candidate) + 1) for t in cand_counts}
    for i in range(len(candidate) - 1, -1, -1):
        for t in remaining_after:
            remaining_after[t][i] = remaining_after[t][i + 1]
        remaining_after[candidate[i]][i] += 1

    nodes = [0]
    budget = 200_000

    def search(i: int, used: set[int], matched: Counter, chunks: int, prev: tuple[int, int] | None):
        nodes[0] += 1
        if nodes[0] > budget or chunks >= best[0]:
            return
        if i == len(candidate):
            if sum(matched.values()) == m:
                best[0] = chunks
            return
        tok = candidate[i]
        if need.get(tok, 0) > matched[tok]:
            for j in ref_positions[tok]:
                if j in used:
                    continue
                contiguous = prev is not None and prev == (i - 1, j - 1)
                used.add(j)
                matched[tok] += 1
                search(i + 1, used, matched, chunks + (0 if contiguous else 1), (i, j))
                matched[tok] -= 1
                used.remove(j)
        # Skipping this occurrence is allowed if later occurrences still
        # cover the required match count for the token.
        if remaining_after[tok][i + 1] + matched[tok] >= need.get(tok, 0):
            search(i + 1, used, matched, chunks, prev)

    search(0, set(), Counter(), 0, None)
    return m, best[0]


def meteor_lite(candidate: Tokens, reference: Tokens) -> float:
    """Exact-match METEOR: harmonic mean weighted toward recall with a
    fragmentation penalty of 0.5 * (chunks / matches)^3."""
    if not candidate or not reference:
        return 0.0
    m, chunks = _align_exact(candidate, reference)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    f = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (chunks / m) ** 3
    return f * (1.0 - penalty)


def r4(candidate: Tokens) -> float:
    """Fraction of 4-gram positions repeating an earlier 4-gram."""
    n = len(candidate) - 3
    if n <= 0:
        return 0.0
    seen = set()
    repeats = 0
    for i in range(n):
        gram = tuple(candidate[i : i + 4])
        if gram in seen:
            repeats += 1
        seen.add(gram)
    return repeats / n


def consistency_f1(pred_a: Tokens, pred_b: Tokens) -> float:
    """Bag-of-tokens F1 between two predictions; both empty counts as 1."""
    if not pred_a and not pred_b:
        return 1.0
    if not pred_a or not pred_b:
        return 0.0
    overlap = sum((Counter(pred_a) & Counter(pred_b)).values())
    if overlap == 0:
        return 0.0
    p = overlap / len(pred_a)
    r = overlap / len(pred_b)
    return 2.0 * p * r / (p + r)


@dataclass
class MetricReport:
    scenario: str
    model_id: str
    cider: float
    meteor: float
    r4: float
    consistency: float | None = None
    per_instance_cider: list[float] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.cider < 0 or not 0 <= self.meteor <= 1 or not 0 <= self.r4 <= 1:
            raise ValueError("metric out of range")


def score_corpus(
    scenario: str,
    model_id: str,
    candidates: Sequence[Tokens],
    references: Sequence[Tokens],
) -> MetricReport:
    cider, per_inst = cider_corpus(candidates, references)
    meteor = sum(meteor_lite(c, r) for c, r in zip(candidates, references)) / len(candidates)
    rep = sum(r4(c) for c in candidates) / len(candidates)
    return MetricReport(scenario, model_id, cider, meteor, rep, per_instance_cider=per_inst)
