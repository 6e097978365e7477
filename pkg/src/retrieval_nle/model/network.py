"""A small pre-norm decoder with image and retrieval cross-attention.

Each block applies four residual sublayers, each as ``x + f(LayerNorm(x))``:

1. causal multi-head self-attention over the token stream,
2. cross-attention whose keys/values are the projected image features,
3. cross-attention whose keys/values are the two projected retrieval rows
   (averaged answer feature, averaged explanation feature; no positions),
4. a GELU feed-forward layer (d_model -> 4 d_model -> d_model).

The output head is tied to the token embedding.  Parameters live in a flat
``dict[str, np.ndarray]``; block ``i`` owns every key starting with ``h{i}.``.
Activations are (batch, time, d_model) float64 arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.numerics import SeededRng, gelu, softmax_rows

ATTN_KINDS = ("self", "img", "retr")
SUBLAYERS = ("self", "img", "retr", "ff")
LN_EPS = 1e-5
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_feat: int = 256
    max_seq: int = 64
    n_img_tokens: int = 1
    n_retr_tokens: int = 2

    def __post_init__(self):
        if self.d_model % self.n_heads:
            raise ValidationError(f"d_model {self.d_model} is not divisible by n_heads {self.n_heads}")
        if self.n_retr_tokens != 2:
            raise ValidationError("n_retr_tokens is fixed at 2 (averaged answer, averaged explanation)")
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_feat", "max_seq", "n_img_tokens"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    D, F = cfg.d_model, cfg.d_feat
    shapes: dict[str, tuple[int, ...]] = {
        "wte": (cfg.vocab_size, D),
        "wpe": (cfg.max_seq, D),
        "img_proj.w": (F, D),
        "img_proj.b": (D,),
        "retr_proj.w": (F, D),
        "retr_proj.b": (D,),
    }
    for i in range(cfg.n_layers):
        p = f"h{i}."
        for sub in SUBLAYERS:
            shapes[p + f"ln_{sub}.g"] = (D,)
            shapes[p + f"ln_{sub}.b"] = (D,)
        for kind in ATTN_KINDS:
            for m in ("q", "k", "v", "o"):
                shapes[p + f"{kind}.w{m}"] = (D, D)
                shapes[p + f"{kind}.b{m}"] = (D,)
        shapes[p + "ff.w1"] = (D, 4 * D)
        shapes[p + "ff.b1"] = (4 * D,)
        shapes[p + "ff.w2"] = (4 * D, D)
        shapes[p + "ff.b2"] = (D,)
    shapes["ln_f.g"] = (D,)
    shapes["ln_f.b"] = (D,)
    return shapes


def init_params(cfg: ModelConfig, seed: int, std: float = INIT_STD) -> dict[str, np.ndarray]:
    """Gaussian(0, std) weights and embeddings, zero biases, unit layer-norm gains."""
    rng = SeededRng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "g":
            params[name] = np.ones(shape)
        elif len(shape) == 1:
            params[name] = np.zeros(shape)
        else:
            params[name] = rng.normal(shape, std=std)
    return params


def zero_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    return {name: np.zeros(shape) for name, shape in param_shapes(cfg).items()}


def check_params(params: Mapping[str, np.ndarray], cfg: ModelConfig) -> None:
    expected = param_shapes(cfg)
    missing = expected.keys() - params.keys()
    extra = params.keys() - expected.keys()
    if missing or extra:
        raise ValidationError(f"parameter names differ: missing {sorted(missing)}, unexpected {sorted(extra)}")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise ValidationError(f"parameter {name} has shape {params[name].shape}, expected {shape}")


def block_params(params: Mapping[str, np.ndarray], i: int) -> dict[str, np.ndarray]:
    prefix = f"h{i}."
    return {k[len(prefix):]: v for k, v in params.items() if k.startswith(prefix)}


# --- primitives with caches -------------------------------------------------


def ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _split_heads(t, n_heads):
    B, T, D = t.shape
    return t.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(t):
    B, H, T, dh = t.shape
    return t.transpose(0, 2, 1, 3).reshape(B, T, H * dh)


def attn_forward(bp, kind, xq, xkv, n_heads, causal):
    """Multi-head attention of queries ``xq`` (B,T,D) over keys/values ``xkv`` (B,S,D)."""
    q = xq @ bp[f"{kind}.wq"] + bp[f"{kind}.bq"]
    k = xkv @ bp[f"{kind}.wk"] + bp[f"{kind}.bk"]
    v = xkv @ bp[f"{kind}.wv"] + bp[f"{kind}.bv"]
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / np.sqrt(qh.shape[-1])
    scores = (qh @ kh.swapaxes(-1, -2)) * scale
    if causal:
        T = scores.shape[-1]
        scores = np.where(np.tril(np.ones((T, T), dtype=bool)), scores, -np.inf)
    att = softmax_rows(scores)
    oh = att @ vh
    o = _merge_heads(oh)
    out = o @ bp[f"{kind}.wo"] + bp[f"{kind}.bo"]
    return out, (xq, xkv, qh, kh, vh, att, o, scale)


def ff_forward(bp, x):
    pre = x @ bp["ff.w1"] + bp["ff.b1"]
    act = gelu(pre)
    return act @ bp["ff.w2"] + bp["ff.b2"], (x, pre, act)


def _check_block_shapes(bp, x, img_h, retr_h):
    D = bp["self.wq"].shape[0]
    if x.ndim != 3 or x.shape[-1] != D:
        raise ValidationError(f"self-attention sublayer: hidden has shape {x.shape}, expected (..., {D})")
    if img_h.ndim != 3 or img_h.shape[-1] != D or img_h.shape[0] != x.shape[0]:
        raise ValidationError(f"image cross-attention sublayer: image block has shape {img_h.shape}")
    if retr_h.ndim != 3 or retr_h.shape[1:] != (2, D) or retr_h.shape[0] != x.shape[0]:
        raise ValidationError(f"retrieval cross-attention sublayer: retrieval block has shape {retr_h.shape}")


def block_forward_batched(bp, x, img_h, retr_h, n_heads, *, keep_cache=False):
    """Run one block on (B,T,D) hidden states; returns (output, cache or None)."""
    _check_block_shapes(bp, x, img_h, retr_h)
    cache = {}
    for sub, kv, causal in (("self", None, True), ("img", img_h, False), ("retr", retr_h, False)):
        a, ln_c = ln_forward(x, bp[f"ln_{sub}.g"], bp[f"ln_{sub}.b"])
        out, at_c = attn_forward(bp, sub, a, a if kv is None else kv, n_heads, causal)
        x = x + out
        if keep_cache:
            cache[sub] = (ln_c, at_c)
    a, ln_c = ln_forward(x, bp["ln_ff.g"], bp["ln_ff.b"])
    out, ff_c = ff_forward(bp, a)
    x = x + out
    if keep_cache:
        cache["ff"] = (ln_c, ff_c)
    return x, (cache if keep_cache else None)


def block_forward(bp, hidden, img_block, retr_block, n_heads: int) -> np.ndarray:
    """Single-sequence block: ``hidden`` (T,D), ``img_block`` (M,D), ``retr_block`` (2,D).

    Self-attention is always causal.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    img_block = np.asarray(img_block, dtype=np.float64)
    retr_block = np.asarray(retr_block, dtype=np.float64)
    if hidden.ndim != 2 or img_block.ndim != 2 or retr_block.ndim != 2:
        raise ValidationError("block_forward expects 2-D hidden, image and retrieval blocks")
    out, _ = block_forward_batched(bp, hidden[None], img_block[None], retr_block[None], n_heads)
    return out[0]


def _as_batch(token_ids, img_feats, retr_feats):
    ids = np.asarray(token_ids)
    img = np.asarray(img_feats, dtype=np.float64)
    retr = np.asarray(retr_feats, dtype=np.float64)
    single = ids.ndim == 1
    if single:
        ids, img, retr = ids[None], img[None], retr[None]
    return ids, img, retr, single


def forward(params, cfg: ModelConfig, token_ids, img_feats, retr_feats, *, keep_cache=False):
    """Logits for a sequence (T,) -> (T,V) or a batch (B,T) -> (B,T,V).

    ``img_feats`` is (n_img_tokens, d_feat) per sequence, ``retr_feats`` (2, d_feat).
    With ``keep_cache=True`` returns ``(logits, cache)`` for backpropagation.
    """
    ids, img, retr, single = _as_batch(token_ids, img_feats, retr_feats)
    B, T = ids.shape
    if T > cfg.max_seq:
        raise ValidationError(f"sequence length {T} exceeds max_seq {cfg.max_seq}")
    if T == 0:
        raise ValidationError("empty token sequence")
    if img.shape != (B, cfg.n_img_tokens, cfg.d_feat):
        raise ValidationError(f"image features have shape {img.shape[1:]}, expected ({cfg.n_img_tokens}, {cfg.d_feat})")
    if retr.shape != (B, 2, cfg.d_feat):
        raise ValidationError(f"retrieval features have shape {retr.shape[1:]}, expected (2, {cfg.d_feat})")
    if ids.min() < 0 or ids.max() >= cfg.vocab_size:
        raise ValidationError("token id out of vocabulary range")

    x = params["wte"][ids] + params["wpe"][:T]
    img_h = img @ params["img_proj.w"] + params["img_proj.b"]
    retr_h = retr @ params["retr_proj.w"] + params["retr_proj.b"]
    block_caches = []
    for i in range(cfg.n_layers):
        x, c = block_forward_batched(block_params(params, i), x, img_h, retr_h, cfg.n_heads, keep_cache=keep_cache)
        block_caches.append(c)
    hf, lnf_c = ln_forward(x, params["ln_f.g"], params["ln_f.b"])
    logits = hf @ params["wte"].T
    if not keep_cache:
        return logits[0] if single else logits
    cache = {"ids": ids, "img": img, "retr": retr, "blocks": block_caches, "lnf": lnf_c, "hf": hf}
    return logits, cache


def hidden_states(params, cfg: ModelConfig, token_ids, img_feats, retr_feats) -> np.ndarray:
    """Residual stream after the last block (before the final layer norm), single sequence."""
    ids, img, retr, _ = _as_batch(token_ids, img_feats, retr_feats)
    T = ids.shape[1]
    x = params["wte"][ids] + params["wpe"][:T]
    img_h = img @ params["img_proj.w"] + params["img_proj.b"]
    retr_h = retr @ params["retr_proj.w"] + params["retr_proj.b"]
    for i in range(cfg.n_layers):
        x, _ = block_forward_batched(block_params(params, i), x, img_h, retr_h, cfg.n_heads)
    return x[0]
