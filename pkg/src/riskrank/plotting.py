"""Figures written next to the delimited outputs (headless backend)."""

from __future__ import annotations

from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps the PNG bytes reproducible across runs
_META = {"Software": None}


def ablation_figure(rows, path, metric="macro_f1"):
    """Mean metric against removal fraction, one line per variant."""
    curves = defaultdict(lambda: defaultdict(list))
    for r in rows:
        v = r[metric]
        if v is not None and np.isfinite(v):
            curves[r["variant"]][float(r["k"])].append(float(v))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for variant in sorted(curves):
        ks = sorted(curves[variant])
        ax.plot(ks, [np.mean(curves[variant][k]) for k in ks], marker="o", label=variant)
    ax.set_xlabel("fraction removed (k)")
    ax.set_ylabel(metric.replace("_", " "))
    ax.legend()
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def loss_figure(objective, path):
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(range(len(objective)), objective, marker=".")
    ax.set_xlabel("epoch")
    ax.set_ylabel("training objective")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)
