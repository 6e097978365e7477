"""Retrieval memory: store samples, score them against a query, return top-K.

Scoring modes (``q`` = query, ``s`` = stored entry):

=========== ==========================================
rere        cos(Q_q, Q_s) + cos(I_q, E_s)
rere_image  cos(Q_q, Q_s) + cos(I_q, I_s)
oracle_a    cos(gt_answer, A_s)
oracle_e    cos(gt_expl, E_s)
oracle_ae   cos(gt_answer, A_s) + cos(gt_expl, E_s)
random      uniform [0, 1) keyed by (seed, entry id)
zero        0 for every entry; averaged features are zero
=========== ==========================================

Ranking is an exhaustive scan followed by a stable descending sort, so ties
go to the entry inserted first.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.numerics import cosine_sim, mean_vectors, zero_norm_warnings

MODES = ("rere", "rere_image", "oracle_a", "oracle_e", "oracle_ae", "random", "zero")
ORACLE_MODES = ("oracle_a", "oracle_e", "oracle_ae")


@dataclass(frozen=True)
class MemoryEntry:
    id: str
    question_text: str
    answer_text: str
    explanation_text: str
    image_ref: str
    q_feat: np.ndarray
    i_feat: np.ndarray
    a_feat: np.ndarray
    e_feat: np.ndarray


@dataclass
class RetrievalQuery:
    q_feat: np.ndarray
    i_feat: np.ndarray
    query_id: str | None = None
    gt_answer_feat: np.ndarray | None = None
    gt_expl_feat: np.ndarray | None = None


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 10
    mode: str = "rere"
    exclude_query_id: bool = True
    random_seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("k must be at least 1")
        if self.mode not in MODES:
            raise ValidationError(f"unknown retrieval mode {self.mode!r}; choose from {', '.join(MODES)}")


@dataclass
class RetrievalResult:
    ranked: list[tuple[str, float]]
    avg_answer_feat: np.ndarray
    avg_expl_feat: np.ndarray
    mode: str = "rere"
    truncated: bool = False  # k exceeded the number of available entries

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.ranked]


class MemoryStore:
    """Ordered collection of :class:`MemoryEntry`; must be frozen before retrieval."""

    def __init__(self, d_feat: int):
        self.d_feat = int(d_feat)
        self.entries: list[MemoryEntry] = []
        self._index: dict[str, int] = {}
        self.frozen = False

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._index

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.entries]

    def get(self, entry_id: str) -> MemoryEntry:
        return self.entries[self._index[entry_id]]

    def add(self, entry: MemoryEntry) -> None:
        if self.frozen:
            raise ValidationError("memory store is frozen")
        if entry.id in self._index:
            raise ValidationError(f"duplicate memory id {entry.id!r}")
        for name in ("q_feat", "i_feat", "a_feat", "e_feat"):
            vec = getattr(entry, name)
            if np.shape(vec) != (self.d_feat,):
                raise ValidationError(
                    f"entry {entry.id!r}: {name} has shape {np.shape(vec)}, store d_feat is {self.d_feat}"
                )
        self._index[entry.id] = len(self.entries)
        self.entries.append(entry)

    def freeze(self) -> "MemoryStore":
        if not self.entries:
            raise ValidationError("empty memory")
        self._mats = {
            name: np.stack([getattr(e, name) for e in self.entries]).astype(np.float64)
            for name in ("q_feat", "i_feat", "a_feat", "e_feat")
        }
        self._norms = {name: np.sqrt(np.einsum("ij,ij->i", m, m)) for name, m in self._mats.items()}
        self.frozen = True
        return self

    def _cosines(self, name: str, vec: np.ndarray) -> np.ndarray:
        mat, norms = self._mats[name], self._norms[name]
        vec = np.asarray(vec, dtype=np.float64)
        qn = np.sqrt(np.dot(vec, vec))
        out = np.zeros(len(self.entries))
        ok = norms > 0
        if qn == 0.0 or not ok.all():
            zero_norm_warnings.bump()
        if qn == 0.0:
            return out
        out[ok] = (mat[ok] @ vec) / (norms[ok] * qn)
        return np.clip(out, -1.0, 1.0)


def build_store(samples: Sequence, provider) -> MemoryStore:
    """Embed every sample and return a frozen store in input order.

    ``samples`` need ``id``, ``image_ref``, ``question``, ``answers`` and
    ``explanations`` attributes.  The first answer and the first explanation
    become the stored ``A_s`` and ``E_s``.
    """
    if len(samples) == 0:
        raise ValidationError("empty memory")
    store = MemoryStore(provider.d_feat)
    for s in samples:
        if not s.question or not s.answers or not s.explanations:
            raise ValidationError(f"sample {s.id!r} lacks question, answer or explanation text")
        answer, explanation = s.answers[0], s.explanations[0]
        store.add(
            MemoryEntry(
                id=s.id,
                question_text=s.question,
                answer_text=answer,
                explanation_text=explanation,
                image_ref=s.image_ref,
                q_feat=provider.embed_text(s.question),
                i_feat=provider.embed_image(s.image_ref),
                a_feat=provider.embed_text(answer),
                e_feat=provider.embed_text(explanation),
            )
        )
    return store.freeze()


def _check_oracle(q: RetrievalQuery, mode: str) -> None:
    if mode in ("oracle_a", "oracle_ae") and q.gt_answer_feat is None:
        raise ValidationError(f"mode {mode} needs a ground-truth answer feature on the query")
    if mode in ("oracle_e", "oracle_ae") and q.gt_expl_feat is None:
        raise ValidationError(f"mode {mode} needs a ground-truth explanation feature on the query")


def random_score(seed: int, entry_id: str) -> float:
    h = hashlib.blake2b(f"{seed}\x1f{entry_id}".encode("utf-8"), digest_size=8).digest()
    return (int.from_bytes(h, "little") >> 11) / float(1 << 53)


def score_entry(q: RetrievalQuery, e: MemoryEntry, mode: str, random_seed: int = 0) -> float:
    """Score one entry; reference path used to cross-check :func:`retrieve`."""
    if mode not in MODES:
        raise ValidationError(f"unknown retrieval mode {mode!r}")
    _check_oracle(q, mode)
    if mode == "rere":
        return cosine_sim(q.q_feat, e.q_feat) + cosine_sim(q.i_feat, e.e_feat)
    if mode == "rere_image":
        return cosine_sim(q.q_feat, e.q_feat) + cosine_sim(q.i_feat, e.i_feat)
    if mode == "oracle_a":
        return cosine_sim(q.gt_answer_feat, e.a_feat)
    if mode == "oracle_e":
        return cosine_sim(q.gt_expl_feat, e.e_feat)
    if mode == "oracle_ae":
        return cosine_sim(q.gt_answer_feat, e.a_feat) + cosine_sim(q.gt_expl_feat, e.e_feat)
    if mode == "random":
        return random_score(random_seed, e.id)
    return 0.0


def score_all(store: MemoryStore, q: RetrievalQuery, cfg: RetrievalConfig) -> np.ndarray:
    """Vectorized scores of every entry, in store order."""
    mode = cfg.mode
    _check_oracle(q, mode)
    if mode == "rere":
        return store._cosines("q_feat", q.q_feat) + store._cosines("e_feat", q.i_feat)
    if mode == "rere_image":
        return store._cosines("q_feat", q.q_feat) + store._cosines("i_feat", q.i_feat)
    if mode == "oracle_a":
        return store._cosines("a_feat", q.gt_answer_feat)
    if mode == "oracle_e":
        return store._cosines("e_feat", q.gt_expl_feat)
    if mode == "oracle_ae":
        return store._cosines("a_feat", q.gt_answer_feat) + store._cosines("e_feat", q.gt_expl_feat)
    if mode == "random":
        return np.array([random_score(cfg.random_seed, e.id) for e in store.entries])
    return np.zeros(len(store))


def retrieve(store: MemoryStore, q: RetrievalQuery, cfg: RetrievalConfig) -> RetrievalResult:
    if not store.frozen:
        raise ValidationError("memory store must be frozen before retrieval")
    for name in ("q_feat", "i_feat", "gt_answer_feat", "gt_expl_feat"):
        vec = getattr(q, name)
        if vec is not None and np.shape(vec) != (store.d_feat,):
            raise ValidationError(f"query {name} has shape {np.shape(vec)}, store d_feat is {store.d_feat}")
    scores = score_all(store, q, cfg)
    candidates = np.arange(len(store))
    if cfg.exclude_query_id and q.query_id is not None and q.query_id in store:
        candidates = candidates[candidates != store._index[q.query_id]]
    if candidates.size == 0:
        raise ValidationError("no memory entries left after excluding the query")
    order = candidates[np.argsort(-scores[candidates], kind="stable")]
    truncated = cfg.k > order.size
    top = order[: cfg.k]
    ranked = [(store.entries[i].id, float(scores[i])) for i in top]
    if cfg.mode == "zero":
        avg_a = np.zeros(store.d_feat)
        avg_e = np.zeros(store.d_feat)
    else:
        avg_a = mean_vectors([store.entries[i].a_feat for i in top])
        avg_e = mean_vectors([store.entries[i].e_feat for i in top])
    return RetrievalResult(ranked, avg_a, avg_e, mode=cfg.mode, truncated=truncated)


def assemble_retrieval_features(r: RetrievalResult) -> np.ndarray:
    """Stack the averaged answer and explanation features as a (2, d_feat) block."""
    return np.stack([r.avg_answer_feat, r.avg_expl_feat]).astype(np.float64)


def query_for_sample(sample, provider, *, with_ground_truth: bool = False) -> RetrievalQuery:
    q = RetrievalQuery(
        q_feat=provider.embed_text(sample.question),
        i_feat=provider.embed_image(sample.image_ref),
        query_id=sample.id,
    )
    if with_ground_truth:
        q.gt_answer_feat = provider.embed_text(sample.answers[0])
        q.gt_expl_feat = provider.embed_text(sample.explanations[0])
    return q


def retrieval_features(store: MemoryStore, samples: Sequence, provider, cfg: RetrievalConfig):
    """Retrieve for every sample; returns ``(features (N, 2, d_feat), results)``."""
    oracle = cfg.mode in ORACLE_MODES
    results = [retrieve(store, query_for_sample(s, provider, with_ground_truth=oracle), cfg) for s in samples]
    feats = np.stack([assemble_retrieval_features(r) for r in results]) if results else np.zeros((0, 2, store.d_feat))
    return feats, results


_VEC_FIELDS = ("q_feat", "i_feat", "a_feat", "e_feat")
_TEXT_FIELDS = ("id", "question_text", "answer_text", "explanation_text", "image_ref")


def save_store(store: MemoryStore, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"d_feat": store.d_feat, "count": len(store)}) + "\n")
        for e in store.entries:
            rec = {name: getattr(e, name) for name in _TEXT_FIELDS}
            rec.update({name: [float(x) for x in getattr(e, name)] for name in _VEC_FIELDS})
            fh.write(json.dumps(rec) + "\n")


def load_store(path) -> MemoryStore:
    path = Path(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines:
        raise ValidationError(f"{path}: no header record")
    try:
        header = json.loads(lines[0])
        d_feat, count = int(header["d_feat"]), int(header["count"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ValidationError(f"{path}:1: bad header ({exc})") from None
    store = MemoryStore(d_feat)
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            rec = json.loads(line)
            kwargs = {name: rec[name] for name in _TEXT_FIELDS}
            kwargs.update({name: np.asarray(rec[name], dtype=np.float64) for name in _VEC_FIELDS})
        except (json.JSONDecodeError, KeyError) as exc:
            raise ValidationError(f"{path}:{lineno}: bad entry ({exc})") from None
        store.add(MemoryEntry(**kwargs))
    if len(store) != count:
        raise ValidationError(f"{path}: header says {count} entries, found {len(store)}")
    return store.freeze()

