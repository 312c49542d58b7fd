"""Desk-scale hierarchical attention ranking network with hand-written gradients."""

from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import encode_sentence
from .layers import gru_cell
from .model import (
    ForwardTrace,
    backward,
    document_embedding,
    forward,
    forward_batch,
    pooled_document_embedding,
    risk_logit,
    scores,
    sentence_attention,
)
from .optim import sgd_step
from .recurrent import context_encode
from .state import ModelConfig, ModelState, init_state, is_encoder_param, parameter_shapes

__all__ = [
    "ForwardTrace",
    "ModelConfig",
    "ModelState",
    "backward",
    "context_encode",
    "document_embedding",
    "encode_sentence",
    "forward",
    "forward_batch",
    "gru_cell",
    "init_state",
    "is_encoder_param",
    "load_checkpoint",
    "parameter_shapes",
    "pooled_document_embedding",
    "risk_logit",
    "save_checkpoint",
    "scores",
    "sentence_attention",
    "sgd_step",
]
