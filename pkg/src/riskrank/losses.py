"""Training objectives over document logits and the triplet sampler.

Every loss returns ``(value, gradient)`` where the gradient is taken with
respect to its first array argument, so the training loop can hand it
straight to the network's backward pass.
"""

from __future__ import annotations

import numpy as np

from .errors import InputShapeError, MissingRiskGroup, NoValidPairs, NoValidTriplets

LOSSES = ("triplet", "pairwise", "cross_entropy")
DEFAULT_MARGIN = 0.1


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def cross_entropy(class_logits, labels) -> tuple[float, np.ndarray]:
    """Summed negative log-likelihood of the true bin under a 3-way softmax."""
    z = np.asarray(class_logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2 or z.shape[0] != len(y):
        raise InputShapeError(f"logits {z.shape} do not match {len(y)} labels")
    if np.any((y < 0) | (y >= z.shape[1])):
        raise InputShapeError("label out of range")
    logp = _log_softmax(z)
    rows = np.arange(len(y))
    loss = -float(logp[rows, y].sum())
    grad = np.exp(logp)
    grad[rows, y] -= 1.0
    return loss, grad


def softmax(class_logits) -> np.ndarray:
    return np.exp(_log_softmax(np.asarray(class_logits, dtype=np.float64)))


def expected_risk_score(class_probabilities) -> float:
    p = np.asarray(class_probabilities, dtype=np.float64)
    if p.shape != (3,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-6:
        raise InputShapeError(f"not a probability vector over 3 bins: {p}")
    return float(p @ np.arange(3.0))


def _softplus(x: np.ndarray) -> np.ndarray:
    # log(1 + exp(x)) without overflow
    return np.logaddexp(0.0, x)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def pairwise_loss(scores, labels) -> tuple[float, np.ndarray]:
    """Binary cross-entropy over every label-distinct pair in the batch.

    Each unordered pair is counted once; the reversed ordering contributes an
    identical term, so counting it too would only double the loss.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if s.shape != y.shape or s.ndim != 1:
        raise InputShapeError("scores and labels must be 1-d of equal length")
    if len(s) < 2:
        raise NoValidPairs("need at least two documents")
    i, j = np.triu_indices(len(s), k=1)
    keep = y[i] != y[j]
    if not keep.any():
        raise NoValidPairs("no pair with distinct labels")
    i, j = i[keep], j[keep]
    # orient every pair so that document i should rank higher (E = 1)
    flip = y[i] < y[j]
    hi = np.where(flip, j, i)
    lo = np.where(flip, i, j)
    delta = s[hi] - s[lo]
    loss = float(_softplus(-delta).sum())
    g = -_sigmoid(-delta)
    grad = np.zeros_like(s)
    np.add.at(grad, hi, g)
    np.add.at(grad, lo, -g)
    return loss, grad


def triplet_loss(triplets, margin: float = DEFAULT_MARGIN) -> tuple[float, np.ndarray]:
    """Mean hinge loss over ``(S_A, S_P, S_N)`` score triples.

    Returns the gradient as a ``(|T|, 3)`` array aligned with the input;
    the subgradient is zero at an exact hinge corner.
    """
    t = np.asarray(triplets, dtype=np.float64).reshape(-1, 3)
    if len(t) == 0:
        raise NoValidTriplets("empty triplet set")
    sa, sp, sn = t[:, 0], t[:, 1], t[:, 2]
    upper = sa - sp + margin
    lower = sn - sa + margin
    loss = float((np.maximum(upper, 0.0) + np.maximum(lower, 0.0)).mean())
    gu = (upper > 0).astype(np.float64)
    gl = (lower > 0).astype(np.float64)
    grad = np.stack([gu - gl, -gu, gl], axis=1) / len(t)
    return loss, grad


def triplet_loss_on_scores(scores, index_triplets, margin: float = DEFAULT_MARGIN) -> tuple[float, np.ndarray]:
    """Triplet loss where triplets index into a score vector; gradient per score."""
    s = np.asarray(scores, dtype=np.float64)
    idx = np.asarray(index_triplets, dtype=np.int64).reshape(-1, 3)
    if len(idx) == 0:
        raise NoValidTriplets("empty triplet set")
    loss, g = triplet_loss(s[idx], margin)
    grad = np.zeros_like(s)
    np.add.at(grad, idx.ravel(), g.ravel())
    return loss, grad


def sample_triplets(labels, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    """(anchor, positive, negative) indices: anchors medium, positives high, negatives low.

    Every member of the batch takes part in at least one triplet. The number
    of triplets is the size of the largest group; smaller groups are cycled
    through a random permutation and then topped up with uniform draws.
    """
    y = np.asarray(labels, dtype=np.int64)
    groups = [np.flatnonzero(y == c) for c in range(3)]
    for c, g in enumerate(groups):
        if len(g) == 0:
            raise MissingRiskGroup(f"batch has no document with label {c}")
    n = max(len(g) for g in groups)
    cols = []
    for g in (groups[1], groups[2], groups[0]):
        perm = rng.permutation(g)
        extra = rng.choice(g, size=n - len(g)) if n > len(g) else np.empty(0, dtype=np.int64)
        cols.append(np.concatenate([perm, extra]))
    return [(int(a), int(p), int(q)) for a, p, q in zip(*cols)]


def batch_loss(kind: str, outputs: np.ndarray, labels, rng: np.random.Generator | None = None,
               margin: float = DEFAULT_MARGIN) -> tuple[float, np.ndarray]:
    """Dispatch by loss name; ``outputs`` are scalar logits or (n, 3) class logits."""
    if kind == "cross_entropy":
        return cross_entropy(outputs, labels)
    if kind == "pairwise":
        return pairwise_loss(outputs, labels)
    if kind == "triplet":
        if rng is None:
            raise ValueError("triplet loss needs a random stream for sampling")
        return triplet_loss_on_scores(outputs, sample_triplets(labels, rng), margin)
    raise ValueError(f"unknown loss {kind!r}")
