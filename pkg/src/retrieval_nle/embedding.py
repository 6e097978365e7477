"""Feature providers standing in for a frozen text/image encoder.

Two providers share one interface (``embed_text`` / ``embed_image``):

* :class:`SyntheticProvider` hashes each token to a fixed Gaussian vector,
  sums and L2-normalizes.  Image references are scene-descriptor strings,
  optionally suffixed with ``#<instance>``; the descriptor part is embedded as
  text and per-image Gaussian noise (keyed by the full reference) is added
  before renormalizing.
* :class:`PrecomputedProvider` serves vectors read from an embedding JSONL
  file (``{"d_feat": d}`` header, then ``{"key": ..., "vec": [...]}`` lines).

Both are immutable after construction.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.numerics import STORAGE_DTYPE, SeededRng, l2_normalize

_TOKEN_RE = re.compile(r"[^\W_]+")
INSTANCE_SEP = "#"


def normalize_text(text: str) -> str:
    return " ".join(text.lower().split())


def feature_tokens(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation (punctuation dropped)."""
    return _TOKEN_RE.findall(text.lower())


def _hash_seed(*parts) -> int:
    h = hashlib.blake2b("\x1f".join(str(p) for p in parts).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


@lru_cache(maxsize=65536)
def _token_vector(seed: int, d_feat: int, token: str) -> np.ndarray:
    v = SeededRng(_hash_seed("tok", seed, token)).normal(d_feat, std=1.0 / np.sqrt(d_feat))
    v.setflags(write=False)
    return v


def image_descriptor(image_ref: str) -> str:
    """Scene descriptor part of an image reference (``"red ball small#17"`` -> ``"red ball small"``)."""
    return image_ref.split(INSTANCE_SEP, 1)[0]


@dataclass(frozen=True)
class SyntheticProvider:
    d_feat: int = 256
    seed: int = 0
    sigma_img: float = 0.1
    kind: str = field(default="synthetic", init=False)

    def __post_init__(self):
        if self.d_feat < 1:
            raise ValidationError("d_feat must be positive")
        if self.sigma_img < 0:
            raise ValidationError("sigma_img must be non-negative")

    def embed_text(self, text: str) -> np.ndarray:
        tokens = feature_tokens(normalize_text(text)) if text else []
        if not tokens:
            raise ValidationError(f"cannot embed empty text {text!r}")
        total = np.zeros(self.d_feat)
        for tok in tokens:
            total = total + _token_vector(self.seed, self.d_feat, tok)
        return l2_normalize(total)

    def embed_image(self, image_ref: str) -> np.ndarray:
        if not image_ref or not image_ref.strip():
            raise ValidationError("empty image reference")
        base = self.embed_text(image_descriptor(image_ref))
        if self.sigma_img == 0:
            return base
        noise = SeededRng(_hash_seed("img", self.seed, image_ref)).normal(self.d_feat, std=self.sigma_img)
        return l2_normalize(base + noise)


class PrecomputedProvider:
    """Lookup table of unit-normalized vectors keyed by exact strings."""

    kind = "precomputed"

    def __init__(self, table: Mapping[str, Iterable[float]], d_feat: int):
        self.d_feat = int(d_feat)
        vecs = {}
        for key, vec in table.items():
            arr = np.asarray(vec, dtype=np.float64)
            if arr.shape != (self.d_feat,):
                raise ValidationError(f"vector for {key!r} has shape {arr.shape}, expected ({self.d_feat},)")
            arr = l2_normalize(arr)
            arr.setflags(write=False)
            vecs[key] = arr
        self._table = vecs

    def __contains__(self, key: str) -> bool:
        return key in self._table

    def __len__(self) -> int:
        return len(self._table)

    def keys(self):
        return self._table.keys()

    def _lookup(self, key: str) -> np.ndarray:
        if key in self._table:
            return self._table[key]
        norm = normalize_text(key)
        if norm in self._table:
            return self._table[norm]
        raise KeyError(f"no precomputed embedding for key {key!r}")

    def embed_text(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise ValidationError("cannot embed empty text")
        return self._lookup(text)

    def embed_image(self, image_ref: str) -> np.ndarray:
        if not image_ref or not image_ref.strip():
            raise ValidationError("empty image reference")
        return self._lookup(image_ref)


def load_precomputed(path) -> PrecomputedProvider:
    path = Path(path)
    header = None
    table: dict[str, list[float]] = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from None
            if header is None:
                if not isinstance(rec, dict) or "d_feat" not in rec:
                    raise ValidationError(f"{path}:{lineno}: no header record")
                header = int(rec["d_feat"])
                continue
            if not isinstance(rec, dict) or "key" not in rec or "vec" not in rec:
                raise ValidationError(f"{path}:{lineno}: record needs 'key' and 'vec'")
            if len(rec["vec"]) != header:
                raise ValidationError(
                    f"{path}:{lineno}: vector length {len(rec['vec'])} != d_feat {header}"
                )
            if rec["key"] in table:
                raise ValidationError(f"{path}:{lineno}: duplicate key {rec['key']!r}")
            table[rec["key"]] = rec["vec"]
    if header is None:
        raise ValidationError(f"{path}: no header record")
    return PrecomputedProvider(table, header)


def write_precomputed(path, vectors: Mapping[str, np.ndarray]) -> None:
    """Write vectors in the embedding JSONL format, stored at 32-bit precision."""
    items = list(vectors.items())
    if not items:
        raise ValidationError("nothing to write")
    d_feat = len(items[0][1])
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"d_feat": d_feat}) + "\n")
        for key, vec in items:
            stored = np.asarray(vec, dtype=np.float64).astype(STORAGE_DTYPE)
            if stored.shape != (d_feat,):
                raise ValidationError(f"vector for {key!r} has the wrong length")
            fh.write(json.dumps({"key": key, "vec": [float(x) for x in stored]}) + "\n")


def make_provider(kind: str = "synthetic", *, d_feat: int = 256, seed: int = 0,
                  sigma_img: float = 0.1, path=None):
    if kind == "synthetic":
        return SyntheticProvider(d_feat=d_feat, seed=seed, sigma_img=sigma_img)
    if kind == "precomputed":
        if path is None:
            raise ValidationError("precomputed provider needs an embeddings path")
        return load_precomputed(path)
    raise ValidationError(f"unknown provider kind {kind!r}")
