"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from retrieval_nle.model.network import ModelConfig
from retrieval_nle.numerics import SeededRng
from retrieval_nle.training.backprop import TrainBatch, loss_and_grads, loss_only

ABS_FALLBACK = 1e-8


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_group: dict[str, float]
    n_checked: int

    def worst(self, n: int = 5) -> list[tuple[str, float]]:
        return sorted(self.per_group.items(), key=lambda kv: -kv[1])[:n]


def compare(analytic: float, numeric: float) -> float:
    """|a - n| / |n|, or the absolute gap when the analytic value is below 1e-8."""
    if abs(analytic) < ABS_FALLBACK:
        return abs(analytic - numeric)
    return abs(analytic - numeric) / max(abs(numeric), np.finfo(float).tiny)


def grad_check(params, cfg: ModelConfig, batch: TrainBatch, h: float = 1e-5, sample_count: int = 8,
               grads=None, seed: int = 0, groups=None) -> GradCheckReport:
    """Compare ``grads`` (computed if not given) against (L(θ+h) - L(θ-h)) / 2h.

    ``sample_count`` scalar entries are drawn per parameter group; pass
    ``sample_count=0`` to check every entry.  ``params`` is restored exactly.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if grads is None:
        _, grads = loss_and_grads(params, cfg, batch)
    rng = SeededRng(seed)
    per_group = {}
    n_checked = 0
    for name in groups or sorted(params):
        arr = params[name]
        flat = arr.reshape(-1)
        if sample_count and sample_count < flat.size:
            picks = rng.choice(flat.size, sample_count, replace=False)
        else:
            picks = np.arange(flat.size)
        worst = 0.0
        for j in picks:
            old = flat[j]
            flat[j] = old + h
            up = loss_only(params, cfg, batch)
            flat[j] = old - h
            down = loss_only(params, cfg, batch)
            flat[j] = old
            numeric = (up - down) / (2 * h)
            worst = max(worst, compare(float(grads[name].reshape(-1)[j]), numeric))
            n_checked += 1
        per_group[name] = worst
    return GradCheckReport(max(per_group.values()), per_group, n_checked)
