"""Dense linear algebra and neural primitives.

Matrices are plain 2-D ``numpy.ndarray`` objects in float64.  Every function
here is pure; the only shared state is the zero-norm counter used by
:func:`cosine_sim`.
"""

from __future__ import annotations

import threading
from typing import Sequence

import numpy as np

from retrieval_nle.errors import ValidationError

DEFAULT_DTYPE = np.float64
STORAGE_DTYPE = np.float32  # only used when writing precomputed embeddings


class SeededRng:
    """Deterministic random stream backed by the Philox-4x64 counter generator.

    Philox is a counter-based generator with a published specification, so the
    stream for a given seed is identical on every platform and numpy build.
    Instances are single-owner: do not share one between workers, use
    :meth:`spawn` instead.
    """

    def __init__(self, seed: int):
        if not 0 <= int(seed) < 2**64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def normal(self, size, std: float = 1.0) -> np.ndarray:
        return self._gen.standard_normal(size) * std

    def uniform(self, size=None) -> np.ndarray | float:
        return self._gen.random(size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = True) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def spawn(self, stream: int) -> "SeededRng":
        """Independent child stream, derived deterministically from the seed."""
        return SeededRng((self.seed * 1_000_003 + stream + 1) % 2**64)


def as_matrix(m) -> np.ndarray:
    a = np.asarray(m, dtype=DEFAULT_DTYPE)
    if a.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValidationError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def softmax_rows(m, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` with max subtraction; works on any rank."""
    m = np.asarray(m, dtype=DEFAULT_DTYPE)
    shifted = m - np.max(m, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize over the last axis, then apply ``gain`` and ``bias``."""
    x = np.asarray(x, dtype=DEFAULT_DTYPE)
    gain = np.asarray(gain, dtype=DEFAULT_DTYPE)
    bias = np.asarray(bias, dtype=DEFAULT_DTYPE)
    if eps <= 0:
        raise ValidationError("layer_norm eps must be positive")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ValidationError(
            f"layer_norm length mismatch: x {x.shape[-1]}, gain {gain.shape}, bias {bias.shape}"
        )
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


class _Counter:
    def __init__(self):
        self._lock = threading.Lock()
        self._value = 0

    def bump(self) -> None:
        with self._lock:
            self._value += 1

    @property
    def value(self) -> int:
        return self._value

    def reset(self) -> None:
        with self._lock:
            self._value = 0


zero_norm_warnings = _Counter()


def cosine_sim(u, v) -> float:
    """Cosine similarity; a zero-norm argument yields 0 and bumps ``zero_norm_warnings``."""
    u = np.asarray(u, dtype=DEFAULT_DTYPE)
    v = np.asarray(v, dtype=DEFAULT_DTYPE)
    if u.shape != v.shape or u.ndim != 1:
        raise ValidationError(f"cosine_sim needs equal-length vectors, got {u.shape} and {v.shape}")
    nu = np.sqrt(np.dot(u, u))
    nv = np.sqrt(np.dot(v, v))
    if nu == 0.0 or nv == 0.0:
        zero_norm_warnings.bump()
        return 0.0
    c = float(np.dot(u, v) / (nu * nv))
    return min(1.0, max(-1.0, c))


def mean_vectors(vs: Sequence) -> np.ndarray:
    if len(vs) == 0:
        raise ValidationError("mean_vectors needs at least one vector")
    stacked = np.asarray(vs, dtype=DEFAULT_DTYPE)
    if stacked.ndim != 2:
        raise ValidationError("mean_vectors needs vectors of a single length")
    return stacked.sum(axis=0) / stacked.shape[0]


def l2_normalize(v) -> np.ndarray:
    v = np.asarray(v, dtype=DEFAULT_DTYPE)
    n = np.sqrt(np.dot(v, v))
    if n == 0.0:
        raise ValidationError("cannot normalize a zero vector")
    return v / n


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh approximation of GELU (the GPT-2 variant)."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * (x * x * x))))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    dinner = _GELU_C * (1.0 + 3 * 0.044715 * x2)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner


_GELU_C = float(np.sqrt(2.0 / np.pi))
