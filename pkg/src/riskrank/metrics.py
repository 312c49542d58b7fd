"""Classification and rank-correlation metrics, effect sizes, score binning.

Correlations and F1 are reported in percent, as in the evaluation tables;
rounding is left to presentation code.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DegenerateDifferences,
    DegenerateRanking,
    InputShapeError,
    InsufficientObservations,
)
from .riskmeasures import DEFAULT_CUTPOINTS, bin_by_percentile

N_CLASSES = 3


def _pair(a, b, dtype=np.float64):
    a = np.asarray(a, dtype=dtype)
    b = np.asarray(b, dtype=dtype)
    if a.ndim != 1 or a.shape != b.shape:
        raise InputShapeError(f"length mismatch: {a.shape} vs {b.shape}")
    return a, b


def per_class_prf(predicted, true) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    pred, y = _pair(predicted, true, dtype=np.int64)
    if np.any((pred < 0) | (pred >= N_CLASSES)) or np.any((y < 0) | (y >= N_CLASSES)):
        raise InputShapeError("labels must lie in {0, 1, 2}")
    precision = np.zeros(N_CLASSES)
    recall = np.zeros(N_CLASSES)
    f1 = np.zeros(N_CLASSES)
    for c in range(N_CLASSES):
        tp = np.sum((pred == c) & (y == c))
        fp = np.sum((pred == c) & (y != c))
        fn = np.sum((pred != c) & (y == c))
        precision[c] = tp / (tp + fp) if tp + fp else 0.0
        recall[c] = tp / (tp + fn) if tp + fn else 0.0
        s = precision[c] + recall[c]
        f1[c] = 2 * precision[c] * recall[c] / s if s else 0.0
    return precision, recall, f1


def macro_f1(predicted_bins, true_bins) -> float:
    _, _, f1 = per_class_prf(predicted_bins, true_bins)
    return float(100.0 * f1.mean())


def spearman_rho(true_bins, predicted_scores) -> float:
    """Pearson correlation of midranks, in percent."""
    y, s = _pair(true_bins, predicted_scores)
    if len(y) < 2:
        raise InsufficientObservations("Spearman's rho needs at least 2 items")
    ry = rankdata(y) - (len(y) + 1) / 2.0
    rs = rankdata(s) - (len(s) + 1) / 2.0
    denom = math.sqrt(float(ry @ ry) * float(rs @ rs))
    if denom == 0.0:
        raise DegenerateRanking("a ranking has zero variance")
    return float(100.0 * (ry @ rs) / denom)


@dataclass(frozen=True)
class PairTally:
    concordant: int
    discordant: int
    tied_true: int
    tied_pred: int
    tied_both: int


def pair_tally(true_bins, predicted_scores) -> PairTally:
    y, s = _pair(true_bins, predicted_scores)
    n = len(y)
    iu = np.triu_indices(n, k=1)
    dy = np.sign(y[:, None] - y[None, :])[iu]
    ds = np.sign(s[:, None] - s[None, :])[iu]
    prod = dy * ds
    return PairTally(
        concordant=int(np.sum(prod > 0)),
        discordant=int(np.sum(prod < 0)),
        tied_true=int(np.sum((dy == 0) & (ds != 0))),
        tied_pred=int(np.sum((dy != 0) & (ds == 0))),
        tied_both=int(np.sum((dy == 0) & (ds == 0))),
    )


def kendall_tau_b(true_bins, predicted_scores, *, tally: PairTally | None = None) -> float:
    y, _ = _pair(true_bins, predicted_scores)
    if len(y) < 2:
        raise InsufficientObservations("Kendall's tau-b needs at least 2 items")
    t = tally or pair_tally(true_bins, predicted_scores)
    p, q = t.concordant, t.discordant
    denom = math.sqrt(float(p + q + t.tied_true) * float(p + q + t.tied_pred))
    if denom == 0.0:
        raise DegenerateRanking("tau-b denominator is zero")
    return float(100.0 * (p - q) / denom)


def paired_cohens_d(metric_a, metric_b) -> float:
    a, b = _pair(metric_a, metric_b)
    if len(a) < 2:
        raise InsufficientObservations("Cohen's d needs at least 2 pairs")
    diff = a - b
    sd = float(np.std(diff, ddof=1))
    if sd == 0.0:
        raise DegenerateDifferences("paired differences have zero spread")
    return float(diff.mean() / sd)


def discretize_scores(scores, cutpoints=DEFAULT_CUTPOINTS) -> np.ndarray:
    return bin_by_percentile(scores, cutpoints)


@dataclass
class EvalReport:
    macro_f1: float
    spearman_rho: float
    kendall_tau_b: float
    precision: list = field(default_factory=list)
    recall: list = field(default_factory=list)
    f1: list = field(default_factory=list)
    concordant: int = 0
    discordant: int = 0
    tied_true: int = 0
    tied_pred: int = 0
    tied_both: int = 0
    n: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def evaluate(true_bins, predicted_scores) -> EvalReport:
    """Bin predicted scores by the label percentiles and score all metrics."""
    y = np.asarray(true_bins, dtype=np.int64)
    s = np.asarray(predicted_scores, dtype=np.float64)
    pred_bins = discretize_scores(s)
    precision, recall, f1 = per_class_prf(pred_bins, y)
    tally = pair_tally(y, s)
    try:
        rho = spearman_rho(y, s)
    except DegenerateRanking:
        rho = float("nan")
    try:
        tau = kendall_tau_b(y, s, tally=tally)
    except DegenerateRanking:
        tau = float("nan")
    return EvalReport(
        macro_f1=float(100.0 * f1.mean()),
        spearman_rho=rho,
        kendall_tau_b=tau,
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        concordant=tally.concordant,
        discordant=tally.discordant,
        tied_true=tally.tied_true,
        tied_pred=tally.tied_pred,
        tied_both=tally.tied_both,
        n=len(y),
    )
