"""Model configuration, parameter container and seeded initialization."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from ..errors import ConfigError, InputShapeError
from .layers import GRU_BLOCKS

AGGREGATORS = ("hierarchical", "mean_pool", "max_pool")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    m: int = 32
    attdim: int = 32
    H: int = 4
    L: int = 350
    l: int = 40
    ffn_width: Optional[int] = None
    n_outputs: int = 1
    aggregator: str = "hierarchical"
    seed: int = 0

    def __post_init__(self):
        if self.ffn_width is None:
            object.__setattr__(self, "ffn_width", 2 * self.m)
        for name in ("vocab_size", "m", "attdim", "H", "L", "l", "ffn_width"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.attdim % 2:
            raise ConfigError(f"attdim must be even, got {self.attdim}")
        if self.m % self.H:
            raise ConfigError(f"m={self.m} is not divisible by H={self.H}")
        if self.n_outputs not in (1, 3):
            raise ConfigError("n_outputs must be 1 (ranking head) or 3 (class head)")
        if self.aggregator not in AGGREGATORS:
            raise ConfigError(f"aggregator must be one of {AGGREGATORS}")
        if self.l < 3:
            raise ConfigError("sentence length l must leave room for CLS, a token and SEP")

    @property
    def head_dim(self) -> int:
        return self.m // self.H

    @property
    def hierarchical(self) -> bool:
        return self.aggregator == "hierarchical"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    m, f, a = cfg.m, cfg.ffn_width, cfg.attdim
    shapes = {
        "embedding": (cfg.vocab_size, m),
        "enc.wq": (m, m), "enc.bq": (m,),
        "enc.wk": (m, m), "enc.bk": (m,),
        "enc.wv": (m, m), "enc.bv": (m,),
        "enc.wo": (m, m), "enc.bo": (m,),
        "enc.ln1_g": (m,), "enc.ln1_b": (m,),
        "enc.w1": (m, f), "enc.b1": (f,),
        "enc.w2": (f, m), "enc.b2": (m,),
        "enc.ln2_g": (m,), "enc.ln2_b": (m,),
    }
    if cfg.hierarchical:
        hd = a // 2
        for d in ("gru_f", "gru_b"):
            for blk in GRU_BLOCKS:
                kind = blk[0]
                if kind == "w":
                    shapes[f"{d}.{blk}"] = (m, hd)
                elif kind == "u":
                    shapes[f"{d}.{blk}"] = (hd, hd)
                else:
                    shapes[f"{d}.{blk}"] = (hd,)
        shapes["att.w"] = (a, a)
        shapes["att.b"] = (a,)
        shapes["att.u"] = (a,)
        head_in = a
    else:
        head_in = m
    if cfg.n_outputs == 1:
        shapes["head.w"] = (head_in,)
        shapes["head.b"] = ()
    else:
        shapes["head.w"] = (head_in, cfg.n_outputs)
        shapes["head.b"] = (cfg.n_outputs,)
    return shapes


def is_encoder_param(name: str) -> bool:
    """Embedding and transformer-block parameters train at the encoder rate."""
    return name == "embedding" or name.startswith("enc.")


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        shapes = parameter_shapes(self.config)
        if set(shapes) != set(self.params):
            missing = set(shapes) - set(self.params)
            extra = set(self.params) - set(shapes)
            raise InputShapeError(f"parameter set mismatch (missing {sorted(missing)}, extra {sorted(extra)})")
        ordered = {}
        for name, shape in shapes.items():
            arr = np.asarray(self.params[name], dtype=np.float64)
            if arr.shape != shape:
                raise InputShapeError(f"{name}: shape {arr.shape}, expected {shape}")
            ordered[name] = arr
        self.params = ordered

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def copy(self) -> "ModelState":
        return ModelState(self.config, {k: v.copy() for k, v in self.params.items()})

    def with_params(self, **updates) -> "ModelState":
        p = {k: v.copy() for k, v in self.params.items()}
        p.update({k.replace("__", "."): np.asarray(v, dtype=np.float64) for k, v in updates.items()})
        return ModelState(self.config, p)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.params.values())

    def n_parameters(self) -> int:
        return sum(v.size for v in self.params.values())

    def equals(self, other: "ModelState") -> bool:
        return self.config == other.config and all(
            np.array_equal(v, other.params[k]) for k, v in self.params.items()
        )


def _glorot(rng, shape) -> np.ndarray:
    fan_in = shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    a = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape)


def init_state(cfg: ModelConfig, seed: Optional[int] = None) -> ModelState:
    """Glorot-uniform weights, zero biases and attention vector, unit norm gains."""
    seed = cfg.seed if seed is None else seed
    cfg = replace(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if leaf.endswith("_g"):
            params[name] = np.ones(shape)
        elif name == "head.b" or leaf.startswith("b") or leaf.endswith("_b") or name == "att.u":
            params[name] = np.zeros(shape)
        else:
            params[name] = _glorot(rng, shape)
    return ModelState(cfg, params)
