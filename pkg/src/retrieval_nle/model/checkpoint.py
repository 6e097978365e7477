"""JSON checkpoint container: config, vocabulary and named parameter arrays."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.model.network import ModelConfig, check_params
from retrieval_nle.model.tokenizer import Tokenizer

MAGIC = "RERE-CKPT-1"


@dataclass
class ModelBundle:
    """Everything needed to run the decoder: weights, shapes and vocabulary."""

    params: dict
    config: ModelConfig
    tokenizer: Tokenizer
    meta: dict = field(default_factory=dict)


def save_checkpoint(path, bundle: ModelBundle) -> None:
    doc = {
        "magic": MAGIC,
        "config": bundle.config.to_dict(),
        "vocab": bundle.tokenizer.itos,
        "meta": bundle.meta,
        "params": {
            name: {"shape": list(arr.shape), "data": [float(x) for x in np.ravel(arr)]}
            for name, arr in bundle.params.items()
        },
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_checkpoint(path) -> ModelBundle:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not a checkpoint ({exc.msg})") from None
    if not isinstance(doc, dict) or doc.get("magic") != MAGIC:
        raise ValidationError(f"{path}: missing magic string {MAGIC!r}")
    cfg = ModelConfig(**doc["config"])
    tokenizer = Tokenizer(doc["vocab"])
    params = {
        name: np.asarray(rec["data"], dtype=np.float64).reshape(rec["shape"])
        for name, rec in doc["params"].items()
    }
    check_params(params, cfg)
    return ModelBundle(params, cfg, tokenizer, doc.get("meta", {}))
