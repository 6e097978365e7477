"""Masked next-token cross-entropy and its hand-derived gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from retrieval_nle.errors import ValidationError
from retrieval_nle.model.network import ModelConfig, _merge_heads, _split_heads, block_params, forward
from retrieval_nle.numerics import gelu_grad


@dataclass
class TrainBatch:
    """Padded batch. ``inputs[b, t]`` predicts ``labels[b, t]`` where ``loss_mask`` is 1."""

    inputs: np.ndarray  # (B, T) int
    labels: np.ndarray  # (B, T) int
    loss_mask: np.ndarray  # (B, T) float, 1 on answer/explanation/EOS targets
    img_feats: np.ndarray  # (B, n_img_tokens, d_feat)
    retr_feats: np.ndarray  # (B, 2, d_feat)

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_batch(prompts, targets, img_feats, retr_feats, pad_id: int) -> TrainBatch:
    """Build a batch from prompt ids (``BOS .. SEP``) and target ids (ending in ``EOS``)."""
    seqs = [list(p) + list(t) for p, t in zip(prompts, targets)]
    T = max(len(s) for s in seqs) - 1
    B = len(seqs)
    inputs = np.full((B, T), pad_id, dtype=np.int64)
    labels = np.full((B, T), pad_id, dtype=np.int64)
    mask = np.zeros((B, T))
    for b, (s, p) in enumerate(zip(seqs, prompts)):
        n = len(s) - 1
        inputs[b, :n] = s[:-1]
        labels[b, :n] = s[1:]
        # label index j holds token j+1; targets start at token len(p)
        mask[b, len(p) - 1 : n] = 1.0
    return TrainBatch(inputs, labels, mask, np.asarray(img_feats, dtype=np.float64),
                      np.asarray(retr_feats, dtype=np.float64))


def masked_cross_entropy(logits, labels, mask):
    """Mean negative log-likelihood over masked positions, and d(loss)/d(logits)."""
    n = mask.sum()
    if n <= 0:
        raise ValidationError("loss mask selects no positions")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - logz
    picked = np.take_along_axis(logp, labels[..., None], axis=-1)[..., 0]
    loss = -(picked * mask).sum() / n
    dlogits = np.exp(logp)
    np.put_along_axis(dlogits, labels[..., None],
                      np.take_along_axis(dlogits, labels[..., None], axis=-1) - 1.0, axis=-1)
    dlogits *= (mask / n)[..., None]
    return float(loss), dlogits


def loss_only(params, cfg: ModelConfig, batch: TrainBatch) -> float:
    logits = forward(params, cfg, batch.inputs, batch.img_feats, batch.retr_feats)
    return masked_cross_entropy(logits, batch.labels, batch.loss_mask)[0]


# --- backward pieces --------------------------------------------------------


def _sum_bt(a):
    return a.reshape(-1, a.shape[-1]).sum(axis=0)


def _outer_bt(x, dy):
    """sum over batch and time of x^T dy."""
    return x.reshape(-1, x.shape[-1]).T @ dy.reshape(-1, dy.shape[-1])


def ln_backward(dy, g, cache):
    xhat, rstd = cache
    dg = _sum_bt(dy * xhat)
    db = _sum_bt(dy)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def attn_backward(dout, bp, kind, cache, n_heads, grads):
    xq, xkv, qh, kh, vh, att, o, scale = cache
    grads[f"{kind}.wo"] += _outer_bt(o, dout)
    grads[f"{kind}.bo"] += _sum_bt(dout)
    doh = _split_heads(dout @ bp[f"{kind}.wo"].T, n_heads)
    datt = doh @ vh.swapaxes(-1, -2)
    dvh = att.swapaxes(-1, -2) @ doh
    dscores = att * (datt - (att * datt).sum(axis=-1, keepdims=True)) * scale
    dqh = dscores @ kh
    dkh = dscores.swapaxes(-1, -2) @ qh
    dq, dk, dv = (_merge_heads(t) for t in (dqh, dkh, dvh))
    grads[f"{kind}.wq"] += _outer_bt(xq, dq)
    grads[f"{kind}.bq"] += _sum_bt(dq)
    grads[f"{kind}.wk"] += _outer_bt(xkv, dk)
    grads[f"{kind}.bk"] += _sum_bt(dk)
    grads[f"{kind}.wv"] += _outer_bt(xkv, dv)
    grads[f"{kind}.bv"] += _sum_bt(dv)
    dxq = dq @ bp[f"{kind}.wq"].T
    dxkv = dk @ bp[f"{kind}.wk"].T + dv @ bp[f"{kind}.wv"].T
    return dxq, dxkv


def block_backward(dx, bp, cache, n_heads, grads):
    """Backprop one block; returns (d hidden, d image block, d retrieval block)."""
    ln_c, (a, pre, act) = cache["ff"]
    grads["ff.w2"] += _outer_bt(act, dx)
    grads["ff.b2"] += _sum_bt(dx)
    dpre = (dx @ bp["ff.w2"].T) * gelu_grad(pre)
    grads["ff.w1"] += _outer_bt(a, dpre)
    grads["ff.b1"] += _sum_bt(dpre)
    da, dg, db = ln_backward(dpre @ bp["ff.w1"].T, bp["ln_ff.g"], ln_c)
    grads["ln_ff.g"] += dg
    grads["ln_ff.b"] += db
    dx = dx + da

    dkv = {}
    for sub in ("retr", "img", "self"):
        ln_c, at_c = cache[sub]
        dxq, dxkv = attn_backward(dx, bp, sub, at_c, n_heads, grads)
        if sub == "self":
            dxq = dxq + dxkv
        else:
            dkv[sub] = dxkv
        da, dg, db = ln_backward(dxq, bp[f"ln_{sub}.g"], ln_c)
        grads[f"ln_{sub}.g"] += dg
        grads[f"ln_{sub}.b"] += db
        dx = dx + da
    return dx, dkv["img"], dkv["retr"]


def loss_and_grads(params, cfg: ModelConfig, batch: TrainBatch):
    """Return ``(loss, grads)`` with ``grads`` keyed and shaped like ``params``."""
    logits, cache = forward(params, cfg, batch.inputs, batch.img_feats, batch.retr_feats, keep_cache=True)
    loss, dlogits = masked_cross_entropy(logits, batch.labels, batch.loss_mask)
    grads = {name: np.zeros_like(arr) for name, arr in params.items()}

    hf = cache["hf"]
    grads["wte"] += _outer_bt(dlogits, hf)
    dhf = dlogits @ params["wte"]
    dx, dg, db = ln_backward(dhf, params["ln_f.g"], cache["lnf"])
    grads["ln_f.g"] += dg
    grads["ln_f.b"] += db

    dimg_h = np.zeros(cache["img"].shape[:2] + (cfg.d_model,))
    dretr_h = np.zeros(cache["retr"].shape[:2] + (cfg.d_model,))
    for i in reversed(range(cfg.n_layers)):
        prefix = f"h{i}."
        bgrads = {k[len(prefix):]: v for k, v in grads.items() if k.startswith(prefix)}
        dx, dimg, dretr = block_backward(dx, block_params(params, i), cache["blocks"][i], cfg.n_heads, bgrads)
        dimg_h += dimg
        dretr_h += dretr

    grads["img_proj.w"] += _outer_bt(cache["img"], dimg_h)
    grads["img_proj.b"] += _sum_bt(dimg_h)
    grads["retr_proj.w"] += _outer_bt(cache["retr"], dretr_h)
    grads["retr_proj.b"] += _sum_bt(dretr_h)

    ids = cache["ids"]
    T = ids.shape[1]
    np.add.at(grads["wte"], ids.ravel(), dx.reshape(-1, cfg.d_model))
    grads["wpe"][:T] += dx.sum(axis=0)
    return loss, grads
