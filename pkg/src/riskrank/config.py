"""Run configuration: a flat ``key = value`` text file with a versioned schema.

Blank lines and ``#`` comments are ignored. Every key must be known to the
schema and appear at most once; ``schema_version`` is mandatory. Relative
paths resolve against the directory holding the config file.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError
from .losses import LOSSES
from .netcore.state import AGGREGATORS
from .riskmeasures import MEASURES

SCHEMA_VERSION = 1
DEFAULT_SEEDS = (98, 83, 62, 42, 21)


@dataclass(frozen=True)
class RunConfig:
    corpus: Optional[str] = None
    returns: Optional[str] = None
    labels: Optional[str] = None
    output_dir: str = "runs"
    compare_report: Optional[str] = None
    measure: str = "std"
    loss: str = "triplet"
    aggregator: str = "hierarchical"
    m: int = 32
    attdim: int = 32
    heads: int = 4
    ffn_width: int = 64
    max_sentences: int = 350
    max_tokens: int = 40
    min_count: int = 1
    epochs: int = 30
    batch_size: int = 8
    encoder_lr: float = 1e-5
    head_lr: float = 6e-5
    margin: float = 0.1
    k_fraction: float = 0.30
    seeds: tuple = DEFAULT_SEEDS
    train_window: int = 5
    test_years: tuple = ()
    min_observations: int = 60
    sortino_degenerate: str = "exclude"
    k_grid: tuple = (0.0, 0.1, 0.2, 0.3)
    ablation_mode: str = "words"
    top_sentences: int = 5
    base_dir: str = field(default=".", compare=False)

    def __post_init__(self):
        choices = {
            "measure": MEASURES,
            "loss": LOSSES,
            "aggregator": AGGREGATORS,
            "sortino_degenerate": ("exclude", "top_bin"),
            "ablation_mode": ("words", "sentences"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if not self.seeds:
            raise ConfigError("seeds must not be empty")
        if not 0.0 < self.k_fraction <= 1.0:
            raise ConfigError("k_fraction must lie in (0, 1]")
        if any(not 0.0 <= k <= 1.0 for k in self.k_grid) or list(self.k_grid) != sorted(self.k_grid):
            raise ConfigError("k_grid must be ascending fractions in [0, 1]")
        for key in ("m", "attdim", "heads", "ffn_width", "max_sentences", "max_tokens", "min_count",
                    "batch_size", "train_window", "min_observations", "top_sentences"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def path(self, key: str) -> Optional[Path]:
        value = getattr(self, key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def require(self, *keys: str):
        for key in keys:
            p = self.path(key)
            if p is None:
                raise ConfigError(f"config key {key!r} is required for this command")
            if key != "output_dir" and not p.exists():
                raise ConfigError(f"{key} path does not exist: {p}")

    def snapshot(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        d["seeds"] = list(self.seeds)
        d["test_years"] = list(self.test_years)
        d["k_grid"] = list(self.k_grid)
        return d

    def content_hash(self) -> str:
        blob = json.dumps(self.snapshot(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def override(self, **kwargs) -> "RunConfig":
        return replace(self, **{k: v for k, v in kwargs.items() if v is not None})


def _coerce(name: str, raw: str, default):
    kind = type(default)
    try:
        if name in ("seeds", "test_years"):
            return tuple(int(x) for x in raw.replace(" ", "").split(",") if x)
        if name == "k_grid":
            return tuple(float(x) for x in raw.replace(" ", "").split(",") if x)
        if default is None:
            return raw
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {raw!r}") from exc


def parse_config(text: str, base_dir=".") -> RunConfig:
    known = {f.name: f.default for f in fields(RunConfig) if f.name != "base_dir"}
    values: dict = {}
    version = None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "schema_version":
            version = raw
            continue
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw, known[key])
    if version is None:
        raise ConfigError("schema_version is missing")
    if version != str(SCHEMA_VERSION):
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    return RunConfig(base_dir=str(base_dir), **values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base_dir=path.parent)


def format_config(cfg: RunConfig) -> str:
    lines = [f"schema_version = {SCHEMA_VERSION}"]
    for key, value in cfg.snapshot().items():
        if value is None:
            continue
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
