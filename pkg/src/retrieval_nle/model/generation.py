"""Greedy decoding conditioned on image and retrieval features."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.model.network import ModelConfig, forward
from retrieval_nle.model.tokenizer import Tokenizer


@dataclass(frozen=True)
class GenerationConfig:
    max_new_tokens: int = 24
    strategy: str = "greedy"

    def __post_init__(self):
        if self.max_new_tokens < 1:
            raise ValidationError("max_new_tokens must be at least 1")
        if self.strategy != "greedy":
            raise ValidationError(f"unsupported decoding strategy {self.strategy!r}")


def generate_batch(params, cfg: ModelConfig, tokenizer: Tokenizer, questions: Sequence[str],
                   img_feats, retr_feats, gen_cfg: GenerationConfig = GenerationConfig()) -> list[str]:
    """Greedy-decode several prompts at once.

    Prompts are right-padded; causal masking keeps padding from leaking into
    earlier positions, so each row decodes exactly as it would alone.
    """
    prompts = [tokenizer.prompt_ids(q) for q in questions]
    budget = cfg.max_seq - gen_cfg.max_new_tokens
    for q, p in zip(questions, prompts):
        if len(p) > budget:
            raise ValidationError(
                f"prompt of {len(p)} tokens for {q!r} exceeds max_seq - max_new_tokens = {budget}"
            )
    img = np.asarray(img_feats, dtype=np.float64)
    retr = np.asarray(retr_feats, dtype=np.float64)
    n = len(prompts)
    lengths = np.array([len(p) for p in prompts])
    width = int(lengths.max()) + gen_cfg.max_new_tokens
    seqs = np.full((n, width), tokenizer.pad_id, dtype=np.int64)
    for r, p in enumerate(prompts):
        seqs[r, : len(p)] = p
    done = np.zeros(n, dtype=bool)
    outputs: list[list[int]] = [[] for _ in range(n)]
    for _ in range(gen_cfg.max_new_tokens):
        active = np.flatnonzero(~done)
        if active.size == 0:
            break
        T = int(lengths[active].max())
        logits = forward(params, cfg, seqs[active, :T], img[active], retr[active])
        last = logits[np.arange(active.size), lengths[active] - 1]
        # np.argmax picks the lowest id on ties
        nxt = np.argmax(last, axis=-1)
        for r, tok in zip(active, nxt):
            if tok == tokenizer.eos_id:
                done[r] = True
                continue
            outputs[r].append(int(tok))
            seqs[r, lengths[r]] = tok
            lengths[r] += 1
    return [tokenizer.decode(o) for o in outputs]


def generate(params, cfg: ModelConfig, question: str, img_feats, retr_feats,
             gen_cfg: GenerationConfig, tokenizer: Tokenizer) -> str:
    return generate_batch(params, cfg, tokenizer, [question], np.asarray(img_feats)[None],
                          np.asarray(retr_feats)[None], gen_cfg)[0]
