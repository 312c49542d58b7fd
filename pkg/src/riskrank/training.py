"""Stratified mini-batch training with the three ranking objectives."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import losses
from .corpus import EncodedDocument
from .errors import ConfigError, MissingRiskGroup
from .netcore import ModelState, backward, forward_batch, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainSettings:
    loss: str = "triplet"
    epochs: int = 30
    batch_size: int = 8
    encoder_lr: float = 1e-5
    head_lr: float = 6e-5
    margin: float = losses.DEFAULT_MARGIN

    def __post_init__(self):
        if self.loss not in losses.LOSSES:
            raise ConfigError(f"loss must be one of {losses.LOSSES}")
        if self.epochs < 0:
            raise ConfigError("epochs must be non-negative")
        if self.batch_size < 3:
            raise ConfigError("batch_size must be at least 3 so every class fits in a batch")


@dataclass
class TrainHistory:
    objective: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)

    def to_rows(self):
        return [{"epoch": i, "objective": v} for i, v in enumerate(self.objective)]


def stratified_batches(labels, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of batches, each holding at least one document per class.

    Round-robin: every batch first draws one unused document from each class
    (reusing a random member once a class runs out), then fills up with
    unused documents in a shuffled order.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = len(y)
    classes = [np.flatnonzero(y == c) for c in range(3)]
    for c, members in enumerate(classes):
        if len(members) == 0:
            raise MissingRiskGroup(f"training set has no document with label {c}")
    queues = [list(rng.permutation(m)) for m in classes]
    pool = list(rng.permutation(n))
    used = np.zeros(n, dtype=bool)
    batches = []
    for _ in range(math.ceil(n / batch_size)):
        batch = []
        for c in range(3):
            q = queues[c]
            while q and used[q[-1]]:
                q.pop()
            if q:
                idx = q.pop()
                used[idx] = True
            else:
                idx = int(rng.choice(classes[c]))
            batch.append(int(idx))
        while len(batch) < batch_size and pool:
            idx = pool.pop()
            if not used[idx]:
                used[idx] = True
                batch.append(int(idx))
        batches.append(np.array(batch, dtype=np.int64))
    return batches


def _outputs(traces):
    if traces[0].class_logits is not None:
        return np.stack([t.class_logits for t in traces])
    return np.array([t.risk_logit for t in traces])


def objective(state: ModelState, docs: Sequence[EncodedDocument], settings: TrainSettings, seed: int,
              chunk: int = 64) -> float:
    """Loss over the whole set with a fixed triplet draw, for progress logging."""
    traces = []
    for i in range(0, len(docs), chunk):
        traces.extend(forward_batch(docs[i : i + chunk], state))
    y = np.array([d.label for d in docs])
    rng = np.random.default_rng(seed)
    value, _ = losses.batch_loss(settings.loss, _outputs(traces), y, rng, settings.margin)
    return value


def train(
    state: ModelState,
    docs: Sequence[EncodedDocument],
    settings: TrainSettings,
    seed: int,
    *,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> tuple[ModelState, TrainHistory]:
    if any(d.label is None for d in docs):
        raise ConfigError("every training document needs a label")
    labels = np.array([d.label for d in docs], dtype=np.int64)
    batch_seq, trip_seq, eval_seq = np.random.SeedSequence(seed).spawn(3)
    batch_rng = np.random.default_rng(batch_seq)
    trip_rng = np.random.default_rng(trip_seq)
    eval_seed = int(eval_seq.generate_state(1)[0])
    history = TrainHistory()
    history.objective.append(objective(state, docs, settings, eval_seed))
    for epoch in range(settings.epochs):
        for idx in stratified_batches(labels, settings.batch_size, batch_rng):
            batch = [docs[i] for i in idx]
            traces = forward_batch(batch, state, cache=True)
            value, grad = losses.batch_loss(settings.loss, _outputs(traces), labels[idx], trip_rng, settings.margin)
            history.batch_losses.append(value)
            grads = backward(traces, list(grad), state)
            state = sgd_step(state, grads, settings.encoder_lr, settings.head_lr)
        history.objective.append(objective(state, docs, settings, eval_seed))
        log.debug("epoch %d objective %.6f", epoch + 1, history.objective[-1])
        if on_epoch is not None:
            on_epoch(epoch + 1, history.objective[-1])
    return state, history
