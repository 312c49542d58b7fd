"""Bidirectional GRU over the sentence sequence of each document."""

from __future__ import annotations

import numpy as np

from .layers import GRU_BLOCKS, gru_cell_backward, gru_cell_forward


def _direction(params, prefix):
    return {b: params[f"{prefix}.{b}"] for b in GRU_BLOCKS}


def _run(x, s, p, reverse):
    """One direction over ``x`` (B, L, m) with presence ``s`` (B, L).

    Masked steps leave the hidden state untouched and emit zeros.
    """
    B, L, _ = x.shape
    hd = p["uz"].shape[0]
    h = np.zeros((B, hd))
    out = np.zeros((B, L, hd))
    caches = [None] * L
    steps = range(L - 1, -1, -1) if reverse else range(L)
    for t in steps:
        active = s[:, t]
        if not active.any():
            continue
        h_new, cache = gru_cell_forward(x[:, t], h, p)
        h = np.where(active[:, None], h_new, h)
        out[:, t] = np.where(active[:, None], h, 0.0)
        caches[t] = cache
    return out, caches


def _run_backward(dout, s, p, caches, reverse, g):
    B, L, hd = dout.shape
    m = p["wz"].shape[0]
    dx = np.zeros((B, L, m))
    dh = np.zeros((B, hd))
    steps = range(L) if reverse else range(L - 1, -1, -1)
    for t in steps:
        if caches[t] is None:
            continue
        active = s[:, t][:, None]
        total = dh + np.where(active, dout[:, t], 0.0)
        dh_new = np.where(active, total, 0.0)
        dxt, dh_prev = gru_cell_backward(dh_new, caches[t], p, g)
        dx[:, t] = np.where(active, dxt, 0.0)
        dh = np.where(active, dh_prev, total)
    return dx


def context_forward(x, s, params):
    s = np.asarray(s, dtype=bool)
    pf, pb = _direction(params, "gru_f"), _direction(params, "gru_b")
    hf, cf = _run(x, s, pf, reverse=False)
    hb, cb = _run(x, s, pb, reverse=True)
    return np.concatenate([hf, hb], axis=-1), (s, cf, cb)


def context_backward(dh, cache, params, grads):
    s, cf, cb = cache
    hd = dh.shape[-1] // 2
    dx = np.zeros(())
    for prefix, dout, caches, rev in (("gru_f", dh[..., :hd], cf, False), ("gru_b", dh[..., hd:], cb, True)):
        p = _direction(params, prefix)
        g = {b: grads[f"{prefix}.{b}"] for b in GRU_BLOCKS}
        dx = dx + _run_backward(dout, s, p, caches, rev, g)
    return dx


def context_encode(sentence_embeddings, sentence_mask, state):
    """Context vectors (L, attdim) for one document."""
    x = np.asarray(sentence_embeddings, dtype=np.float64)[None]
    h, _ = context_forward(x, np.asarray(sentence_mask, dtype=bool)[None], state.params)
    return h[0]
