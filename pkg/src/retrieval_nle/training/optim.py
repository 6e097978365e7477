"""Adam with bias correction and global-norm gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from retrieval_nle.errors import TrainingDiverged, ValidationError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 16
    grad_clip_norm: float = 1.0
    seed: int = 0

    def __post_init__(self):
        for name in ("learning_rate", "adam_eps", "grad_clip_norm"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        for name in ("epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be at least 1")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ValidationError("Adam betas must lie in [0, 1)")


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def adam_step(params, grads, state: AdamState, cfg: TrainConfig):
    """One in-place Adam update; returns ``(params, state)``."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient in parameter group {name}")
        if g.shape != params[name].shape:
            raise ValidationError(f"gradient {name} has shape {g.shape}, parameter has {params[name].shape}")
    norm = global_norm(grads)
    scale = cfg.grad_clip_norm / norm if norm > cfg.grad_clip_norm else 1.0
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in sorted(params):
        g = grads[name] * scale
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        params[name] -= cfg.learning_rate * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state
