"""Corpus-level caption metrics and the VQA answer-membership rule.

All metrics share one tokenizer (:func:`metric_tokens`): lowercase the text,
then take maximal runs of Unicode letters/digits; everything else (spaces,
punctuation, underscores) separates tokens and is dropped.

Deviations from the usual reference toolkits:

* BLEU-4 has no smoothing; a zero precision at any order gives 0.
* CIDEr uses no stemming and a plain TF-IDF cosine (no count clipping),
  with the Gaussian length penalty (sigma = 6) of CIDEr-D.
* METEOR-lite aligns exact unigram matches only (no stemming, no synonyms).
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from retrieval_nle.errors import ValidationError

_WORD_RE = re.compile(r"[^\W_]+")
CIDER_SIGMA = 6.0
ROUGE_BETA = 1.2
METEOR_NOTE = "meteor_lite: exact-match unigram alignment only (no stemming or synonym stages)"


def metric_tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class ScoredPair:
    hypothesis: tuple[str, ...]
    references: tuple[tuple[str, ...], ...]

    def __post_init__(self):
        if not self.references:
            raise ValidationError("a scored pair needs at least one reference")

    @classmethod
    def from_text(cls, hypothesis: str, references: Sequence[str]) -> "ScoredPair":
        return cls(tuple(metric_tokens(hypothesis)), tuple(tuple(metric_tokens(r)) for r in references))


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _require(corpus) -> None:
    if not corpus:
        raise ValidationError("metric needs a non-empty corpus")


# --- BLEU-4 -----------------------------------------------------------------


def bleu4(corpus: Sequence[ScoredPair]) -> float:
    _require(corpus)
    matched = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for pair in corpus:
        hyp = pair.hypothesis
        hyp_len += len(hyp)
        # closest reference length, ties go to the shorter one
        ref_len += min((abs(len(r) - len(hyp)), len(r)) for r in pair.references)[1]
        for n in range(1, 5):
            counts = _ngrams(hyp, n)
            max_ref: Counter = Counter()
            for r in pair.references:
                max_ref |= _ngrams(r, n)
            matched[n - 1] += sum(min(c, max_ref[g]) for g, c in counts.items())
            total[n - 1] += sum(counts.values())
    if hyp_len == 0 or any(m == 0 for m in matched):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matched, total)) / 4
    bp = 1.0 if hyp_len > ref_len else math.exp(1 - ref_len / hyp_len)
    return bp * math.exp(log_p)


# --- ROUGE-L ----------------------------------------------------------------


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, start=1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_pair(hyp: Sequence[str], ref: Sequence[str], beta: float = ROUGE_BETA) -> float:
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    p = lcs / len(hyp)
    r = lcs / len(ref)
    return (1 + beta**2) * p * r / (r + beta**2 * p)


def rouge_l(corpus: Sequence[ScoredPair]) -> float:
    _require(corpus)
    return sum(max(rouge_l_pair(p.hypothesis, r) for r in p.references) for p in corpus) / len(corpus)


# --- CIDEr ------------------------------------------------------------------


def _tfidf(counts: Counter, df: Counter, n_docs: int) -> dict:
    # df is clipped at 1, so n-grams absent from every reference weigh log(N)
    return {g: c * math.log(n_docs / max(1, df[g])) for g, c in counts.items()}


def _cosine(u: dict, v: dict) -> float:
    nu = math.sqrt(sum(x * x for x in u.values()))
    nv = math.sqrt(sum(x * x for x in v.values()))
    if nu == 0 or nv == 0:
        return 0.0
    dot = sum(x * v.get(g, 0.0) for g, x in u.items())
    return dot / (nu * nv)


def cider(corpus: Sequence[ScoredPair], sigma: float = CIDER_SIGMA) -> float:
    if len(corpus) < 2:
        raise ValidationError("CIDEr needs at least 2 pairs to estimate document frequencies; score a larger corpus")
    N = len(corpus)
    ref_counts = [[[_ngrams(r, n) for r in p.references] for n in range(1, 5)] for p in corpus]
    dfs = []
    for n in range(4):
        df: Counter = Counter()
        for per_pair in ref_counts:
            seen = set()
            for c in per_pair[n]:
                seen.update(c)
            df.update(seen)
        dfs.append(df)
    total = 0.0
    for p, per_pair in zip(corpus, ref_counts):
        score_n = []
        for n in range(4):
            hv = _tfidf(_ngrams(p.hypothesis, n + 1), dfs[n], N)
            sims = []
            for r, rc in zip(p.references, per_pair[n]):
                delta = len(p.hypothesis) - len(r)
                sims.append(_cosine(hv, _tfidf(rc, dfs[n], N)) * math.exp(-(delta**2) / (2 * sigma**2)))
            score_n.append(sum(sims) / len(sims))
        total += 10.0 * sum(score_n) / 4
    return total / N


# --- METEOR-lite ------------------------------------------------------------


def align(hyp: Sequence[str], ref: Sequence[str]) -> tuple[int, int]:
    """Exact unigram alignment with the most matches, then the fewest chunks.

    Returns ``(matches, chunks)``.  A chunk is a run of matches adjacent in
    both the hypothesis and the reference.  Exhaustive search with
    memoization; only words occurring more than once can branch.
    """
    hyp, ref = tuple(hyp), tuple(ref)
    ref_pos: dict[str, list[int]] = {}
    for j, w in enumerate(ref):
        ref_pos.setdefault(w, []).append(j)
    need = Counter(hyp) & Counter(ref)
    target = sum(need.values())
    if target == 0:
        return 0, 0
    remaining_after = [Counter(hyp[i + 1 :]) for i in range(len(hyp))]

    @lru_cache(maxsize=None)
    def best(i: int, used: frozenset, prev: int, left: tuple) -> float:
        """Fewest chunks from hyp position i on; ``left`` holds matches still owed per word."""
        if i == len(hyp):
            return 0 if not left else math.inf
        w = hyp[i]
        owed = dict(left)
        n_owed = owed.get(w, 0)
        out = math.inf
        if n_owed <= remaining_after[i][w]:
            out = best(i + 1, used, -2, left)
        if n_owed:
            owed[w] -= 1
            if not owed[w]:
                del owed[w]
            new_left = tuple(sorted(owed.items()))
            for j in ref_pos[w]:
                if j in used:
                    continue
                # positions of a fully matched word no longer matter
                new_used = used | {j} if w in owed else used - set(ref_pos[w])
                out = min(out, (j != prev + 1) + best(i + 1, new_used, j, new_left))
        return out

    chunks = best(0, frozenset(), -2, tuple(sorted(need.items())))
    return target, int(chunks)


def meteor_lite_pair(hyp: Sequence[str], ref: Sequence[str]) -> float:
    m, chunks = align(hyp, ref)
    if m == 0:
        return 0.0
    p = m / len(hyp)
    r = m / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (chunks / m) ** 3
    return f_mean * (1 - penalty)


def meteor_lite(corpus: Sequence[ScoredPair]) -> float:
    _require(corpus)
    return sum(max(meteor_lite_pair(p.hypothesis, r) for r in p.references) for p in corpus) / len(corpus)


# --- VQA accuracy -----------------------------------------------------------

_PUNCT_RE = re.compile(r"[^\w\s]|_")


def normalize_answer(text: str) -> str:
    return " ".join(_PUNCT_RE.sub(" ", text.lower()).split())


def vqa_accuracy(pred_answer: str, expected_answers: Sequence[str]) -> bool:
    if not expected_answers:
        raise ValidationError("vqa_accuracy needs at least one expected answer")
    return normalize_answer(pred_answer) in {normalize_answer(a) for a in expected_answers}


# --- reports ----------------------------------------------------------------


@dataclass(frozen=True)
class MetricReport:
    bleu4: float
    meteor_lite: float
    rouge_l: float
    cider: float | None  # None when fewer than 2 pairs
    n: int

    @property
    def empty(self) -> bool:
        return self.n == 0

    def to_dict(self) -> dict:
        return {"bleu4": self.bleu4, "meteor_lite": self.meteor_lite, "rouge_l": self.rouge_l,
                "cider": self.cider, "n": self.n}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def score_corpus(corpus: Sequence[ScoredPair]) -> MetricReport:
    """All four metrics; an empty corpus yields an all-zero report with ``n = 0``."""
    if not corpus:
        return MetricReport(0.0, 0.0, 0.0, None, 0)
    return MetricReport(
        bleu4=bleu4(corpus),
        meteor_lite=meteor_lite(corpus),
        rouge_l=rouge_l(corpus),
        cider=cider(corpus) if len(corpus) >= 2 else None,
        n=len(corpus),
    )
