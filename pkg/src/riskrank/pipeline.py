"""Pipeline commands operating on a run directory.

A run directory is ``<output_dir>/<config-hash[:12]>-<UTC timestamp>`` and
holds every artifact plus ``manifest.json``, which records relative paths to
them. Commands reuse the newest run directory of the same configuration
unless told otherwise, so ``label``, ``split``, ``train``, ``eval``,
``explain`` and ``ablate`` can be invoked one after another.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .config import RunConfig
from .corpus import CorpusStore, Vocabulary, build_vocabulary, encode_document, read_jsonl
from .errors import (
    CheckpointError,
    ConfigError,
    DegenerateDifferences,
    EmptyOutput,
    InsufficientObservations,
    InternalInvariantViolation,
    IoError,
    NonFiniteGradient,
    NotFound,
    PairingError,
)
from .explain import ablation_curve, top_sentence_report, word_clouds
from .labeling import label_map, label_returns, read_labels, read_returns, write_labels
from .metrics import evaluate, paired_cohens_d
from .netcore import ModelConfig, forward_batch, init_state, load_checkpoint, save_checkpoint, scores
from .riskmeasures import rolling_origin_splits
from .training import TrainSettings, train

log = logging.getLogger(__name__)

METRICS = ("macro_f1", "spearman_rho", "kendall_tau_b")
ABLATION_COLUMNS = (
    "k", "macro_f1", "rho", "tau_b", "mode", "seed",
    "variant", "test_year", "n_docs", "n_failed", "n_masked",
)


def _atomic_write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _clean(obj):
    """JSON-safe copy: non-finite floats become null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _dump(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    tool_version: str = __version__
    labels: Optional[str] = None
    splits: dict = field(default_factory=dict)
    vocabularies: dict = field(default_factory=dict)
    checkpoints: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return _dump(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "RunManifest":
        try:
            return cls(**json.loads(text))
        except (json.JSONDecodeError, TypeError) as exc:
            raise IoError(f"corrupt run manifest: {exc}") from exc

    def save(self, path):
        _atomic_write_text(Path(path), self.to_json())

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            return cls.from_json(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise IoError(f"cannot read manifest {path}: {exc}") from exc

    def artifacts(self) -> list[str]:
        paths = [self.labels] if self.labels else []
        paths += list(self.splits.values()) + list(self.checkpoints.values()) + list(self.reports.values())
        paths += [v["path"] for v in self.vocabularies.values()]
        return paths

    def missing(self, run_dir) -> list[str]:
        return [p for p in self.artifacts() if not (Path(run_dir) / p).exists()]


def resolve_run_dir(cfg: RunConfig, *, new_run: bool = False, run_dir=None, now: Optional[datetime] = None) -> Path:
    """Explicit directory, else the newest matching run, else a fresh one."""
    if run_dir is not None:
        path = Path(run_dir)
        path.mkdir(parents=True, exist_ok=True)
        return path
    root = cfg.path("output_dir")
    prefix = cfg.content_hash()[:12]
    if not new_run and root.exists():
        existing = sorted(p for p in root.glob(prefix + "-*") if p.is_dir())
        if existing:
            return existing[-1]
    stamp = (now or datetime.now(timezone.utc)).strftime("%Y%m%dT%H%M%S")
    path = root / f"{prefix}-{stamp}"
    n = 0
    while path.exists():
        n += 1
        path = root / f"{prefix}-{stamp}_{n}"
    path.mkdir(parents=True)
    return path


class Run:
    """A configuration bound to its run directory and manifest."""

    def __init__(self, cfg: RunConfig, run_dir, store: Optional[CorpusStore] = None,
                 base: Optional[RunConfig] = None):
        """``base`` is the configuration as read from file, before command-line overrides."""
        self.cfg = cfg
        base = base or cfg
        self.dir = Path(run_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        mpath = self.dir / "manifest.json"
        if mpath.exists():
            self.manifest = RunManifest.load(mpath)
        else:
            self.manifest = RunManifest(base.snapshot(), base.content_hash())
        self._store = store

    @property
    def store(self) -> CorpusStore:
        if self._store is None:
            self.cfg.require("corpus")
            self._store = CorpusStore(read_jsonl(self.cfg.path("corpus")))
        return self._store

    def rel(self, path: Path) -> str:
        return Path(path).relative_to(self.dir).as_posix()

    def save(self):
        self.manifest.save(self.dir / "manifest.json")

    def model_key(self, year: int, seed: int) -> str:
        c = self.cfg
        return f"{c.measure}_{c.loss}_{c.aggregator}_{year}_s{seed}"

    def grid_key(self) -> str:
        c = self.cfg
        return f"{c.measure}_{c.loss}_{c.aggregator}"


def _seeds(run: Run, seeds) -> tuple:
    return tuple(seeds) if seeds else tuple(run.cfg.seeds)


def _labels_file(run: Run) -> Path:
    if run.cfg.labels is not None:
        run.cfg.require("labels")
        return run.cfg.path("labels")
    if run.manifest.labels is None:
        raise ConfigError("no labels: set 'labels' in the config or run the label command first")
    return run.dir / run.manifest.labels


# ---------------------------------------------------------------- label


def cmd_label(run: Run) -> Path:
    cfg = run.cfg
    cfg.require("returns")
    frame = label_returns(
        read_returns(cfg.path("returns")),
        min_observations=cfg.min_observations,
        sortino_degenerate=cfg.sortino_degenerate,
    )
    out = run.dir / "labels.csv"
    write_labels(frame, out)
    run.manifest.labels = run.rel(out)
    run.save()
    log.info("wrote %d label rows to %s", len(frame), out)
    return out


# ---------------------------------------------------------------- split


def cmd_split(run: Run) -> Path:
    cfg = run.cfg
    lmap = label_map(read_labels(_labels_file(run), cfg.measure))
    store = run.store
    by_year: dict[int, list[str]] = {}
    for doc_id in store.ids():
        year = store.year_of(doc_id)
        if (doc_id, year) in lmap:
            by_year.setdefault(year, []).append(doc_id)
    if not by_year:
        raise EmptyOutput(f"no corpus document has a {cfg.measure} label")
    splits = rolling_origin_splits(by_year, cfg.train_window)
    if cfg.test_years:
        splits = [s for s in splits if s[1] in cfg.test_years]
        if not splits:
            raise ConfigError(f"none of test_years {list(cfg.test_years)} is a valid test year")
    entries = []
    for train_years, test_year in splits:
        entries.append({
            "measure": cfg.measure,
            "train_years": list(train_years),
            "test_year": test_year,
            "train_ids": sorted(i for y in train_years for i in by_year.get(y, [])),
            "test_ids": sorted(by_year.get(test_year, [])),
        })
    out = run.dir / "splits" / f"{cfg.measure}.json"
    _atomic_write_text(out, _dump(entries))
    run.manifest.splits[cfg.measure] = run.rel(out)
    run.save()
    return out


def load_splits(run: Run) -> list[dict]:
    rel = run.manifest.splits.get(run.cfg.measure)
    if rel is None:
        log.info("no split manifest for %s yet; computing it", run.cfg.measure)
        cmd_split(run)
        rel = run.manifest.splits[run.cfg.measure]
    return json.loads((run.dir / rel).read_text(encoding="utf-8"))


def _encode(run: Run, ids: Sequence[str], vocab: Vocabulary, lmap) -> list:
    cfg = run.cfg
    out = []
    for doc_id in ids:
        raw = run.store.get(doc_id)
        out.append(encode_document(raw.text, vocab, cfg.max_sentences, cfg.max_tokens,
                                   doc_id=doc_id, year=raw.year, label=lmap[(doc_id, raw.year)]))
    return out


def _vocab_for(run: Run, year: int) -> Vocabulary:
    entry = run.manifest.vocabularies.get(f"{run.cfg.measure}_{year}")
    if entry is None:
        raise CheckpointError(f"no vocabulary for {run.cfg.measure} {year}; run the train command first")
    vocab = Vocabulary.from_json((run.dir / entry["path"]).read_text(encoding="utf-8"))
    if vocab.content_hash() != entry["hash"]:
        raise CheckpointError(f"vocabulary {entry['path']} does not match its recorded hash")
    return vocab


def _state_for(run: Run, year: int, seed: int):
    key = run.model_key(year, seed)
    rel = run.manifest.checkpoints.get(key)
    if rel is None:
        raise CheckpointError(f"no checkpoint {key}; run the train command first")
    return load_checkpoint(run.dir / rel)


def _test_docs(run: Run, split: dict, vocab: Vocabulary, lmap) -> list:
    run.store.phase = f"eval:{split['test_year']}"
    return _encode(run, split["test_ids"], vocab, lmap)


# ---------------------------------------------------------------- train


def _write_loss_log(path: Path, objective):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "objective"))
        for i, v in enumerate(objective):
            w.writerow((i, repr(float(v))))


def cmd_train(run: Run, seeds=None, *, plots: bool = True) -> list[Path]:
    """Train one model per (split, seed); a non-finite gradient aborts only that seed."""
    cfg = run.cfg
    settings = TrainSettings(cfg.loss, cfg.epochs, cfg.batch_size, cfg.encoder_lr, cfg.head_lr, cfg.margin)
    lmap = label_map(read_labels(_labels_file(run), cfg.measure))
    written, failures = [], []
    for split in load_splits(run):
        year = split["test_year"]
        run.store.phase = f"train:{year}"
        vocab = build_vocabulary((run.store.get(i).text for i in split["train_ids"]), cfg.min_count)
        vpath = run.dir / "vocab" / f"{cfg.measure}_{year}.json"
        _atomic_write_text(vpath, vocab.to_json())
        run.manifest.vocabularies[f"{cfg.measure}_{year}"] = {"path": run.rel(vpath), "hash": vocab.content_hash()}
        docs = _encode(run, split["train_ids"], vocab, lmap)
        for seed in _seeds(run, seeds):
            mcfg = ModelConfig(
                vocab_size=vocab.size, m=cfg.m, attdim=cfg.attdim, H=cfg.heads,
                L=cfg.max_sentences, l=cfg.max_tokens, ffn_width=cfg.ffn_width,
                n_outputs=3 if cfg.loss == "cross_entropy" else 1,
                aggregator=cfg.aggregator, seed=seed,
            )
            try:
                state, history = train(init_state(mcfg, seed), docs, settings, seed)
            except NonFiniteGradient as exc:
                log.error("test year %d seed %d aborted: %s", year, seed, exc)
                failures.append((year, seed))
                continue
            key = run.model_key(year, seed)
            ckpt = run.dir / "checkpoints" / f"{key}.ckpt"
            extra = {
                "measure": cfg.measure, "loss": cfg.loss, "test_year": year,
                "train_years": split["train_years"], "vocab_hash": vocab.content_hash(),
                "objective": history.objective,
            }
            save_checkpoint(ckpt, state, extra)
            _write_loss_log(run.dir / "checkpoints" / f"{key}_loss.csv", history.objective)
            if plots:
                from .plotting import loss_figure

                loss_figure(history.objective, run.dir / "checkpoints" / f"{key}_loss.png")
            run.manifest.checkpoints[key] = run.rel(ckpt)
            written.append(ckpt)
            log.info("trained %s: objective %.4f -> %.4f", key, history.objective[0], history.objective[-1])
    run.save()
    if not written and failures:
        raise NonFiniteGradient(f"every seed diverged: {failures}")
    return written


# ---------------------------------------------------------------- eval


def summarize(cells: Sequence[dict]) -> dict:
    """Mean and sample standard deviation of each metric over finite cells."""
    out = {}
    for m in METRICS:
        vals = np.array([c[m] for c in cells if c[m] is not None and math.isfinite(c[m])], dtype=float)
        out[m] = {
            "n": int(vals.size),
            "mean": float(vals.mean()) if vals.size else None,
            "std": float(vals.std(ddof=1)) if vals.size > 1 else None,
        }
    return out


def paired_effect_sizes(cells_a: Sequence[dict], cells_b: Sequence[dict]) -> dict:
    """Cohen's d of ``a - b`` per metric over cells matched on (seed, measure, test year).

    Undefined effect sizes (zero spread, fewer than two pairs) come back as None.
    """
    def index(cells):
        return {(c["seed"], c["measure"], c["test_year"]): c for c in cells}

    a, b = index(cells_a), index(cells_b)
    if set(a) != set(b):
        only_a = sorted(set(a) - set(b))
        only_b = sorted(set(b) - set(a))
        raise PairingError(f"run grids differ: only in first {only_a}, only in second {only_b}")
    keys = sorted(a)
    out = {}
    for m in METRICS:
        xa = [a[k][m] for k in keys]
        xb = [b[k][m] for k in keys]
        if any(v is None for v in xa + xb):
            out[m] = None
            continue
        try:
            out[m] = paired_cohens_d(xa, xb)
        except (DegenerateDifferences, InsufficientObservations):
            out[m] = None
    return out


def cmd_eval(run: Run, seeds=None) -> Path:
    cfg = run.cfg
    lmap = label_map(read_labels(_labels_file(run), cfg.measure))
    cells = []
    for split in load_splits(run):
        year = split["test_year"]
        vocab = _vocab_for(run, year)
        docs = _test_docs(run, split, vocab, lmap)
        truth = [d.label for d in docs]
        for seed in _seeds(run, seeds):
            state, _ = _state_for(run, year, seed)
            report = evaluate(truth, scores(docs, state))
            cell = {"seed": seed, "measure": cfg.measure, "test_year": year, "report": report.to_dict()}
            cell.update({m: getattr(report, m) for m in METRICS})
            cells.append(_clean(cell))
    result = {
        "measure": cfg.measure, "loss": cfg.loss, "aggregator": cfg.aggregator,
        "cells": cells, "summary": summarize(cells),
    }
    if cfg.compare_report is not None:
        cfg.require("compare_report")
        try:
            other = json.loads(cfg.path("compare_report").read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise IoError(f"cannot read comparison report: {exc}") from exc
        result["cohens_d"] = {"against": str(cfg.compare_report),
                              "values": paired_effect_sizes(cells, other["cells"])}
    out = run.dir / "reports" / f"eval_{run.grid_key()}.json"
    _atomic_write_text(out, _dump(result))
    run.manifest.reports[f"eval_{run.grid_key()}"] = run.rel(out)
    run.save()
    return out


# ---------------------------------------------------------------- explain


def _traces(docs, state, chunk: int = 64):
    out = []
    for i in range(0, len(docs), chunk):
        out.extend(forward_batch(docs[i : i + chunk], state))
    return out


def _require_hierarchical(cfg: RunConfig, what: str):
    if cfg.aggregator != "hierarchical":
        raise ConfigError(f"{what} needs the hierarchical aggregator, not {cfg.aggregator}")


def _safe_name(doc_id: str) -> str:
    return re.sub(r"[^\w.-]", "_", doc_id)


def cmd_explain(run: Run, seeds=None, doc_ids: Sequence[str] = ()) -> list[Path]:
    """Word clouds per test year and heatmaps for the requested documents.

    Only the first selected seed is explained.
    """
    cfg = run.cfg
    _require_hierarchical(cfg, "explanations")
    splits = load_splits(run)
    tested = {i for s in splits for i in s["test_ids"]}
    unknown = sorted(set(doc_ids) - tested)
    if unknown:
        raise NotFound(f"document ids not in any test set: {unknown}")
    wanted = set(doc_ids)
    seed = _seeds(run, seeds)[0]
    lmap = label_map(read_labels(_labels_file(run), cfg.measure))
    written = []
    for split in splits:
        year = split["test_year"]
        vocab = _vocab_for(run, year)
        docs = _test_docs(run, split, vocab, lmap)
        state, _ = _state_for(run, year, seed)
        traces = _traces(docs, state)
        clouds = word_clouds(docs, traces, vocab, cfg.k_fraction)
        key = run.model_key(year, seed)
        out = run.dir / "explain" / f"clouds_{key}.json"
        _atomic_write_text(out, _dump({str(g): table for g, table in enumerate(clouds)}))
        run.manifest.reports[f"clouds_{key}"] = run.rel(out)
        written.append(out)
        for doc, trace in zip(docs, traces):
            if doc.doc_id not in wanted:
                continue
            heat = {
                "doc_id": doc.doc_id, "test_year": year, "seed": seed, "score": trace.score,
                "sentences": top_sentence_report(trace, doc, cfg.top_sentences, vocab),
            }
            out = run.dir / "explain" / f"heatmap_{key}_{_safe_name(doc.doc_id)}.json"
            _atomic_write_text(out, _dump(heat))
            run.manifest.reports[f"heatmap_{key}_{doc.doc_id}"] = run.rel(out)
            written.append(out)
    run.save()
    return written


# ---------------------------------------------------------------- ablate


def ablation_rows(points, *, test_year: int, seed: int, mode: str) -> list[dict]:
    rows = []
    for p in points:
        rep = p.report
        rows.append({
            "k": p.k,
            "macro_f1": rep.macro_f1 if rep else None,
            "rho": rep.spearman_rho if rep else None,
            "tau_b": rep.kendall_tau_b if rep else None,
            "mode": mode, "seed": seed, "variant": p.variant, "test_year": test_year,
            "n_docs": p.n_docs, "n_failed": p.n_failed, "n_masked": p.n_masked,
        })
    return rows


def _check_monotone(points):
    counts = [p.n_masked for p in points]
    if any(b < a for a, b in zip(counts, counts[1:])):
        raise InternalInvariantViolation(f"masked-token counts decrease along k: {counts}")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ""
    return str(v)


def write_ablation_csv(rows, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ABLATION_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in ABLATION_COLUMNS])


def cmd_ablate(run: Run, seeds=None, mode: Optional[str] = None, k_grid=None, *, plots: bool = True) -> Path:
    """Attention-guided and random removal curves for every (split, seed)."""
    cfg = run.cfg
    mode = mode or cfg.ablation_mode
    if mode not in ("words", "sentences"):
        raise ConfigError(f"mode must be 'words' or 'sentences', got {mode!r}")
    k_grid = tuple(k_grid) if k_grid is not None else cfg.k_grid
    if any(not 0.0 <= k <= 1.0 for k in k_grid) or list(k_grid) != sorted(k_grid):
        raise ConfigError("k grid must be ascending fractions in [0, 1]")
    _require_hierarchical(cfg, "attention-guided removal")
    lmap = label_map(read_labels(_labels_file(run), cfg.measure))
    rows = []
    for split in load_splits(run):
        year = split["test_year"]
        vocab = _vocab_for(run, year)
        docs = _test_docs(run, split, vocab, lmap)
        for seed in _seeds(run, seeds):
            state, _ = _state_for(run, year, seed)
            for random_control in (False, True):
                points = ablation_curve(state, docs, k_grid, mode, random_control=random_control, seed=seed)
                _check_monotone(points)
                rows.extend(ablation_rows(points, test_year=year, seed=seed, mode=mode))
    out = run.dir / "ablation" / f"ablation_{run.grid_key()}_{mode}.csv"
    write_ablation_csv(rows, out)
    run.manifest.reports[f"ablation_{run.grid_key()}_{mode}"] = run.rel(out)
    if plots:
        from .plotting import ablation_figure

        ablation_figure(rows, out.with_suffix(".png"))
    run.save()
    return out
