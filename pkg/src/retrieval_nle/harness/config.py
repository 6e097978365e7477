"""Flat JSON run configuration.

One object whose keys are the union of the model, training, retrieval,
synthetic-task, embedding and generation settings, e.g.::

    {"d_model": 64, "n_layers": 2, "learning_rate": 0.001, "epochs": 30,
     "k": 10, "mode": "rere", "n_scenes": 60, "sigma_img": 0.1, "seed": 0}

``seed`` drives both data generation and weight initialization;
``embed_seed`` (defaulting to ``seed``) drives the synthetic embedder.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

from retrieval_nle.embedding import make_provider
from retrieval_nle.errors import ValidationError
from retrieval_nle.harness.synthetic import DEFAULT_ATTRIBUTES, SyntheticTaskConfig
from retrieval_nle.memory import RetrievalConfig
from retrieval_nle.model.generation import GenerationConfig
from retrieval_nle.model.network import ModelConfig
from retrieval_nle.training.optim import TrainConfig


@dataclass
class RunConfig:
    # model
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    max_seq: int = 64
    n_img_tokens: int = 1
    # training
    learning_rate: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    batch_size: int = 16
    grad_clip_norm: float = 1.0
    seed: int = 0
    # retrieval
    k: int = 10
    mode: str = "rere"
    exclude_query_id: bool = True
    random_seed: int = 0
    # synthetic task
    n_scenes: int = 60
    n_train: int = 500
    n_val: int = 100
    n_test: int = 100
    sigma_img: float = 0.1
    attributes: dict | None = None
    # embeddings
    provider: str = "synthetic"
    d_feat: int = 256
    embed_seed: int | None = None
    embeddings: str | None = None
    # generation
    max_new_tokens: int = 24

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            d = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: malformed JSON config ({exc.msg})") from None
        if not isinstance(d, dict):
            raise ValidationError(f"{path}: config must be a JSON object")
        return cls.from_dict(d)

    def to_dict(self) -> dict:
        return asdict(self)

    def model(self, vocab_size: int = 1) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, d_model=self.d_model, n_layers=self.n_layers,
                           n_heads=self.n_heads, d_feat=self.d_feat, max_seq=self.max_seq,
                           n_img_tokens=self.n_img_tokens)

    def training(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, adam_beta1=self.adam_beta1,
                           adam_beta2=self.adam_beta2, adam_eps=self.adam_eps, epochs=self.epochs,
                           batch_size=self.batch_size, grad_clip_norm=self.grad_clip_norm, seed=self.seed)

    def retrieval(self) -> RetrievalConfig:
        return RetrievalConfig(k=self.k, mode=self.mode, exclude_query_id=self.exclude_query_id,
                               random_seed=self.random_seed)

    def synthetic(self) -> SyntheticTaskConfig:
        attrs = self.attributes or {k: list(v) for k, v in DEFAULT_ATTRIBUTES.items()}
        return SyntheticTaskConfig(n_scenes=self.n_scenes, attributes=attrs, n_train=self.n_train,
                                   n_val=self.n_val, n_test=self.n_test, sigma_img=self.sigma_img,
                                   seed=self.seed)

    def generation(self) -> GenerationConfig:
        return GenerationConfig(max_new_tokens=self.max_new_tokens)

    def provider_settings(self) -> dict:
        return {"provider": self.provider, "d_feat": self.d_feat,
                "embed_seed": self.seed if self.embed_seed is None else self.embed_seed,
                "sigma_img": self.sigma_img, "embeddings": self.embeddings}


def provider_from_settings(settings: dict):
    return make_provider(settings["provider"], d_feat=settings["d_feat"], seed=settings["embed_seed"],
                         sigma_img=settings["sigma_img"], path=settings.get("embeddings"))
