"""Epoch loop: cache features once, then shuffled mini-batch Adam."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from retrieval_nle.errors import TrainingDiverged, ValidationError
from retrieval_nle.memory import MemoryStore, RetrievalConfig, retrieval_features
from retrieval_nle.model.checkpoint import ModelBundle
from retrieval_nle.model.network import ModelConfig, init_params
from retrieval_nle.model.template import format_target
from retrieval_nle.model.tokenizer import Tokenizer
from retrieval_nle.numerics import SeededRng
from retrieval_nle.training.backprop import TrainBatch, loss_and_grads, make_batch
from retrieval_nle.training.optim import AdamState, TrainConfig, adam_step

log = logging.getLogger(__name__)


def image_features(provider, image_ref: str, n_tokens: int = 1) -> np.ndarray:
    """(n_tokens, d_feat) image block; several tokens read keys ``<ref>@0``, ``<ref>@1``, ..."""
    if n_tokens == 1:
        return provider.embed_image(image_ref)[None]
    return np.stack([provider.embed_image(f"{image_ref}@{j}") for j in range(n_tokens)])


def target_text(sample) -> str:
    return format_target(sample.answers[0], sample.explanations[0])


def build_tokenizer(samples: Sequence) -> Tokenizer:
    texts = []
    for s in samples:
        texts.append(s.question)
        texts.extend(s.answers)
        texts.extend(s.explanations)
    return Tokenizer.build(texts)


@dataclass
class EncodedSet:
    prompts: list[list[int]]
    targets: list[list[int]]
    img_feats: np.ndarray
    retr_feats: np.ndarray

    def __len__(self) -> int:
        return len(self.prompts)

    def batch(self, idx) -> TrainBatch:
        idx = list(idx)
        return make_batch([self.prompts[i] for i in idx], [self.targets[i] for i in idx],
                          self.img_feats[idx], self.retr_feats[idx], pad_id=0)


def encode_samples(samples, tokenizer: Tokenizer, cfg: ModelConfig, provider, retr_feats) -> EncodedSet:
    prompts, targets = [], []
    for s in samples:
        p = tokenizer.prompt_ids(s.question)
        t = tokenizer.encode(target_text(s)) + [tokenizer.eos_id]
        if len(p) + len(t) - 1 > cfg.max_seq:
            raise ValidationError(f"sample {s.id!r}: {len(p) + len(t)} tokens exceed max_seq {cfg.max_seq}")
        prompts.append(p)
        targets.append(t)
    img = np.stack([image_features(provider, s.image_ref, cfg.n_img_tokens) for s in samples])
    return EncodedSet(prompts, targets, img, np.asarray(retr_feats, dtype=np.float64))


@dataclass
class TrainResult:
    params: dict
    model_cfg: ModelConfig
    tokenizer: Tokenizer
    losses: list[float]

    def bundle(self, meta: dict | None = None) -> ModelBundle:
        return ModelBundle(self.params, self.model_cfg, self.tokenizer, dict(meta or {}))


def train(model_cfg: ModelConfig, train_cfg: TrainConfig, dataset: Sequence, store: MemoryStore | None,
          provider, retrieval_cfg: RetrievalConfig, tokenizer: Tokenizer | None = None,
          init=None) -> TrainResult:
    """Train on ``dataset`` (a list of samples) with retrieval from ``store``.

    The vocabulary is built from ``dataset`` unless a tokenizer is given, and
    ``model_cfg.vocab_size`` is overridden to match it.  Retrieval runs once
    per sample before the first epoch, always excluding the sample itself.
    """
    if not dataset:
        raise ValidationError("empty training set")
    tokenizer = tokenizer or build_tokenizer(dataset)
    model_cfg = replace(model_cfg, vocab_size=tokenizer.vocab_size)
    if model_cfg.d_feat != provider.d_feat:
        raise ValidationError(f"model d_feat {model_cfg.d_feat} != provider d_feat {provider.d_feat}")

    rcfg = replace(retrieval_cfg, exclude_query_id=True)
    if rcfg.mode == "zero":
        retr = np.zeros((len(dataset), 2, provider.d_feat))
    else:
        if store is None:
            raise ValidationError(f"retrieval mode {rcfg.mode} needs a memory store")
        retr, _ = retrieval_features(store, dataset, provider, rcfg)
    data = encode_samples(dataset, tokenizer, model_cfg, provider, retr)

    params = init if init is not None else init_params(model_cfg, seed=train_cfg.seed)
    state = AdamState()
    rng = SeededRng(train_cfg.seed).spawn(1)
    losses: list[float] = []
    n = len(data)
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(n)
        total, count = 0.0, 0
        for step, start in enumerate(range(0, n, train_cfg.batch_size)):
            idx = order[start : start + train_cfg.batch_size]
            loss, grads = loss_and_grads(params, model_cfg, data.batch(idx))
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} at epoch {epoch}, step {step}")
            try:
                adam_step(params, grads, state, train_cfg)
            except TrainingDiverged as exc:
                raise TrainingDiverged(f"{exc} at epoch {epoch}, step {step}") from None
            total += loss * len(idx)
            count += len(idx)
        losses.append(total / count)
        log.info("epoch %d/%d  loss %.4f", epoch, train_cfg.epochs, losses[-1])
    return TrainResult(params, model_cfg, tokenizer, losses)


def write_loss_curve(path, losses: Sequence[float]) -> None:
    lines = ["epoch,mean_loss"] + [f"{i},{loss!r}" for i, loss in enumerate(losses, start=1)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
