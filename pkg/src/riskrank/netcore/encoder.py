"""Single-block masked multi-head self-attention sentence encoder.

The sentence embedding is the block output at the CLS position; word
attention is the CLS query row of the attention matrix averaged over heads.
"""

from __future__ import annotations

import math

import numpy as np

from ..corpus import CLS
from ..errors import InternalInvariantViolation, InputShapeError
from .layers import gelu, layer_norm, layer_norm_backward, masked_softmax, softmax_backward


def _split_heads(x, H):
    n, l, m = x.shape
    return x.reshape(n, l, H, m // H).transpose(0, 2, 1, 3)


def _merge_heads(x):
    n, H, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, l, H * dh)


def encoder_forward(ids, mask, p, H):
    """Encode a stack of sentence rows.

    ``ids`` and ``mask`` are ``(n, l)``. Returns block outputs ``(n, l, m)``,
    attention probabilities ``(n, H, l, l)`` and a cache for the backward pass.
    """
    n, l = ids.shape
    x = p["embedding"][ids]
    q = _split_heads(x @ p["enc.wq"] + p["enc.bq"], H)
    k = _split_heads(x @ p["enc.wk"] + p["enc.bk"], H)
    v = _split_heads(x @ p["enc.wv"] + p["enc.bv"], H)
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    attn = masked_softmax(scores, mask[:, None, None, :])
    ctx = _merge_heads(attn @ v)
    o = ctx @ p["enc.wo"] + p["enc.bo"]
    y1, ln1 = layer_norm(x + o, p["enc.ln1_g"], p["enc.ln1_b"])
    pre = y1 @ p["enc.w1"] + p["enc.b1"]
    act, dact = gelu(pre)
    f = act @ p["enc.w2"] + p["enc.b2"]
    y2, ln2 = layer_norm(y1 + f, p["enc.ln2_g"], p["enc.ln2_b"])
    cache = (ids, x, q, k, v, attn, ctx, y1, ln1, act, dact, ln2, scale, H)
    return y2, attn, cache


def encoder_backward(dy2, cache, p, g):
    """Accumulate encoder and embedding gradients into ``g`` from ``dL/d outputs``."""
    ids, x, q, k, v, attn, ctx, y1, ln1, act, dact, ln2, scale, H = cache
    m = x.shape[-1]

    def flat(a):
        return a.reshape(-1, a.shape[-1])

    dr2, dg, db = layer_norm_backward(dy2, p["enc.ln2_g"], ln2)
    g["enc.ln2_g"] += dg
    g["enc.ln2_b"] += db
    df = dr2
    g["enc.w2"] += flat(act).T @ flat(df)
    g["enc.b2"] += flat(df).sum(axis=0)
    dpre = (df @ p["enc.w2"].T) * dact
    g["enc.w1"] += flat(y1).T @ flat(dpre)
    g["enc.b1"] += flat(dpre).sum(axis=0)
    dy1 = dr2 + dpre @ p["enc.w1"].T
    dr1, dg, db = layer_norm_backward(dy1, p["enc.ln1_g"], ln1)
    g["enc.ln1_g"] += dg
    g["enc.ln1_b"] += db
    dx = dr1.copy()
    do = dr1
    g["enc.wo"] += flat(ctx).T @ flat(do)
    g["enc.bo"] += flat(do).sum(axis=0)
    dctx = _split_heads(do @ p["enc.wo"].T, H)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(dattn, attn) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    for name, d in (("q", dq), ("k", dk), ("v", dv)):
        d = _merge_heads(d)
        g[f"enc.w{name}"] += flat(x).T @ flat(d)
        g[f"enc.b{name}"] += flat(d).sum(axis=0)
        dx += d @ p[f"enc.w{name}"].T
    np.add.at(g["embedding"], ids.ravel(), dx.reshape(-1, m))


def encode_sentence(row, mask, state, *, sentence_present: bool = True):
    """CLS embedding (m,) and word attention (l,) for one token row."""
    ids = np.asarray(row, dtype=np.int64)
    msk = np.asarray(mask, dtype=bool)
    if ids.shape != (state.config.l,) or msk.shape != ids.shape:
        raise InputShapeError(f"row must have length {state.config.l}")
    if sentence_present and not msk.any():
        raise InternalInvariantViolation("sentence marked present but every token is masked")
    y2, attn, _ = encoder_forward(ids[None], msk[None], state.params, state.config.H)
    return y2[0, 0].copy(), attn[0, :, 0, :].mean(axis=0)


def check_cls_rows(ids, mask):
    """Every encoded row must start with an unmasked CLS token."""
    if not np.all(mask[:, 0]) or not np.all(ids[:, 0] == CLS):
        raise InternalInvariantViolation("active sentence row does not start with CLS")
