"""Two-rate plain gradient descent."""

from __future__ import annotations

import numpy as np

from ..errors import InputShapeError, NonFiniteGradient
from .state import ModelState, is_encoder_param


def sgd_step(state: ModelState, grads: dict, encoder_lr: float, head_lr: float) -> ModelState:
    """Return a new state; encoder parameters move at ``encoder_lr``, the rest at ``head_lr``."""
    for name, g in grads.items():
        if name not in state.params or np.shape(g) != state.params[name].shape:
            raise InputShapeError(f"gradient {name!r} does not match the model")
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {name}")
    new = {}
    for name, value in state.params.items():
        g = grads.get(name)
        lr = encoder_lr if is_encoder_param(name) else head_lr
        new[name] = value.copy() if g is None else value - lr * np.asarray(g)
    return ModelState(state.config, new)
