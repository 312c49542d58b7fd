"""Forward composition of the hierarchical network and its exact backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..corpus import EncodedDocument
from ..errors import EmptyDocument, InputShapeError, InternalInvariantViolation, MissingTrace
from .encoder import encoder_backward, encoder_forward
from .layers import masked_softmax, softmax_backward
from .recurrent import context_backward, context_forward
from .state import ModelState


def sentence_attention(h, sentence_mask, state: ModelState) -> np.ndarray:
    """Softmax attention over the unmasked rows of ``h`` (L, attdim)."""
    smask = np.asarray(sentence_mask, dtype=bool)
    if not smask.any():
        raise EmptyDocument("no unmasked sentence")
    p = state.params
    u = np.tanh(np.asarray(h) @ p["att.w"] + p["att.b"])
    return masked_softmax(u @ p["att.u"], smask)


def document_embedding(alpha_s, h) -> np.ndarray:
    return np.asarray(alpha_s) @ np.asarray(h)


def pooled_document_embedding(token_outputs, masks, mode: str = "mean") -> np.ndarray:
    """Mean or coordinate-wise max of the unmasked token vectors (rows of ``token_outputs``)."""
    x = np.asarray(token_outputs, dtype=np.float64)
    keep = np.asarray(masks, dtype=bool).reshape(-1)
    if x.ndim != 2 or keep.shape[0] != x.shape[0]:
        raise InputShapeError("token outputs and mask disagree")
    if not keep.any():
        raise EmptyDocument("no unmasked token")
    if mode == "mean":
        return x[keep].mean(axis=0)
    if mode == "max":
        return x[keep].max(axis=0)
    raise ValueError(f"unknown pooling mode {mode!r}")


def risk_logit(d, state: ModelState):
    return np.asarray(d) @ state.params["head.w"] + state.params["head.b"]


@dataclass
class ForwardTrace:
    doc_id: str
    risk_logit: Optional[float]
    class_logits: Optional[np.ndarray]
    sentence_attention: Optional[np.ndarray]
    word_attention: np.ndarray
    sentence_embeddings: np.ndarray
    context: Optional[np.ndarray]
    document_embedding: np.ndarray
    _cache: Optional["_BatchCache"] = field(default=None, repr=False, compare=False)
    _index: int = field(default=-1, repr=False, compare=False)

    @property
    def score(self) -> float:
        """Ranking score: the logit, or the expected bin under the class head."""
        if self.class_logits is None:
            return float(self.risk_logit)
        z = self.class_logits - self.class_logits.max()
        pr = np.exp(z) / np.exp(z).sum()
        return float(pr @ np.arange(len(pr), dtype=np.float64))

    @property
    def has_cache(self) -> bool:
        return self._cache is not None

    def drop_cache(self) -> "ForwardTrace":
        self._cache = None
        return self


@dataclass
class _BatchCache:
    active: np.ndarray
    enc: tuple
    l: int
    head_in: np.ndarray
    hier: Optional[tuple] = None
    pooled: Optional[tuple] = None


def _stack(docs: Sequence[EncodedDocument], state: ModelState):
    cfg = state.config
    for d in docs:
        if d.token_ids.shape != (cfg.L, cfg.l):
            raise InputShapeError(f"document {d.doc_id!r} has grid {d.token_ids.shape}, model expects {(cfg.L, cfg.l)}")
    ids = np.stack([d.token_ids for d in docs]).astype(np.int64)
    tmask = np.stack([d.token_mask for d in docs]).astype(bool)
    smask = np.stack([d.sentence_mask for d in docs]).astype(bool)
    tmask &= smask[:, :, None]
    return ids, tmask, smask


def forward_batch(docs: Sequence[EncodedDocument], state: ModelState, *, cache: bool = False) -> list[ForwardTrace]:
    """Run every document through the network; documents never interact."""
    if len(docs) == 0:
        return []
    cfg = state.config
    p = state.params
    ids, tmask, smask = _stack(docs, state)
    B, L, l = ids.shape
    for b, d in enumerate(docs):
        if not smask[b].any():
            raise EmptyDocument(f"document {d.doc_id!r} has no unmasked sentence")
    flat_s = smask.reshape(-1)
    active = np.flatnonzero(flat_s)
    rows = ids.reshape(-1, l)[active]
    rmask = tmask.reshape(-1, l)[active]
    if not rmask.any(axis=1).all():
        raise InternalInvariantViolation("a present sentence has every token masked")
    y2, attn, enc_cache = encoder_forward(rows, rmask, p, cfg.H)

    word_att = np.zeros((B * L, l))
    word_att[active] = attn[:, :, 0, :].mean(axis=1)
    sent = np.zeros((B * L, cfg.m))
    sent[active] = y2[:, 0]
    word_att = word_att.reshape(B, L, l)
    sent = sent.reshape(B, L, cfg.m)

    hier = pooled = None
    h = alpha = None
    if cfg.hierarchical:
        h, ctx_cache = context_forward(sent, smask, p)
        u = np.tanh(h @ p["att.w"] + p["att.b"])
        alpha = masked_softmax(u @ p["att.u"], smask)
        head_in = np.einsum("bl,bla->ba", alpha, h)
        hier = (h, ctx_cache, u, alpha)
    else:
        tok = np.zeros((B * L, l, cfg.m))
        tok[active] = y2
        tok = tok.reshape(B, L * l, cfg.m)
        keep = tmask.reshape(B, L * l)
        counts = keep.sum(axis=1)
        if cfg.aggregator == "mean_pool":
            head_in = (tok * keep[:, :, None]).sum(axis=1) / counts[:, None]
            pooled = (keep, counts, None)
        else:
            masked = np.where(keep[:, :, None], tok, -np.inf)
            arg = masked.argmax(axis=1)
            head_in = np.take_along_axis(tok, arg[:, None, :], axis=1)[:, 0]
            pooled = (keep, counts, arg)

    out = head_in @ p["head.w"] + p["head.b"]
    bc = _BatchCache(active, enc_cache, l, head_in, hier, pooled) if cache else None
    traces = []
    for b, d in enumerate(docs):
        scalar = cfg.n_outputs == 1
        traces.append(
            ForwardTrace(
                doc_id=d.doc_id,
                risk_logit=float(out[b]) if scalar else None,
                class_logits=None if scalar else out[b].copy(),
                sentence_attention=None if alpha is None else alpha[b].copy(),
                word_attention=word_att[b],
                sentence_embeddings=sent[b],
                context=None if h is None else h[b].copy(),
                document_embedding=head_in[b].copy(),
                _cache=bc,
                _index=b,
            )
        )
    return traces


def forward(doc: EncodedDocument, state: ModelState, *, cache: bool = False) -> ForwardTrace:
    return forward_batch([doc], state, cache=cache)[0]


def scores(docs: Sequence[EncodedDocument], state: ModelState, batch_size: int = 64) -> np.ndarray:
    out = []
    for i in range(0, len(docs), batch_size):
        out.extend(t.score for t in forward_batch(docs[i : i + batch_size], state))
    return np.array(out, dtype=np.float64)


def _backward_group(bc: _BatchCache, dout: np.ndarray, state: ModelState, g: dict):
    cfg = state.config
    p = state.params
    g["head.w"] += bc.head_in.T @ dout
    g["head.b"] += dout.sum(axis=0)
    if cfg.n_outputs == 1:
        din = dout[:, None] * p["head.w"][None, :]
    else:
        din = dout @ p["head.w"].T
    B = din.shape[0]
    n_act = len(bc.active)
    l = bc.l
    dy2 = np.zeros((n_act, l, cfg.m))
    if cfg.hierarchical:
        h, ctx_cache, u, alpha = bc.hier
        dalpha = np.einsum("ba,bla->bl", din, h)
        dh = alpha[:, :, None] * din[:, None, :]
        dscore = softmax_backward(dalpha, alpha)
        g["att.u"] += np.einsum("bl,bla->a", dscore, u)
        da = dscore[:, :, None] * p["att.u"] * (1.0 - u * u)
        a = h.shape[-1]
        g["att.w"] += h.reshape(-1, a).T @ da.reshape(-1, a)
        g["att.b"] += da.sum(axis=(0, 1))
        dh += da @ p["att.w"].T
        dsent = context_backward(dh, ctx_cache, p, g)
        dy2[:, 0] = dsent.reshape(-1, cfg.m)[bc.active]
    else:
        keep, counts, arg = bc.pooled
        Ll = keep.shape[1]
        if arg is None:
            dtok = keep[:, :, None] * (din / counts[:, None])[:, None, :]
        else:
            dtok = np.zeros((B, Ll, cfg.m))
            np.put_along_axis(dtok, arg[:, None, :], din[:, None, :], axis=1)
        dy2 = dtok.reshape(-1, l, cfg.m)[bc.active]
    encoder_backward(dy2, bc.enc, p, g)


def backward(traces: Sequence[ForwardTrace], loss_gradients, state: ModelState) -> dict[str, np.ndarray]:
    """Exact parameter gradients given dLoss/d(head output) for each trace.

    Traces produced by the same ``forward_batch`` call are processed together.
    """
    grads = state.zeros_like()
    cfg = state.config
    lg = [np.asarray(x, dtype=np.float64) for x in loss_gradients]
    if len(lg) != len(traces):
        raise InputShapeError("one loss gradient per trace is required")
    groups: dict[int, tuple[_BatchCache, list]] = {}
    order = []
    for t, d in zip(traces, lg):
        if t._cache is None:
            raise MissingTrace(f"trace for {t.doc_id!r} carries no gradient cache")
        key = id(t._cache)
        if key not in groups:
            groups[key] = (t._cache, [])
            order.append(key)
        groups[key][1].append((t._index, d))
    for key in order:
        bc, items = groups[key]
        B = bc.head_in.shape[0]
        dout = np.zeros((B,) if cfg.n_outputs == 1 else (B, cfg.n_outputs))
        for idx, d in items:
            dout[idx] += d
        if not np.any(dout):
            continue
        _backward_group(bc, dout, state, grads)
    return grads
