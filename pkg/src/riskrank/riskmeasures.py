"""Residual-based risk statistics, percentile labels and rolling-origin splits.

Daily returns are first reduced to excess returns, regressed on the three
Fama-French factors, and the regression residuals summarised by four
statistics (volatility, skewness, excess kurtosis, Sortino ratio). Companies
are then ranked within a year and cut into three ordinal bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateDistribution,
    DegenerateDownside,
    InputShapeError,
    InsufficientObservations,
    SingularDesign,
)

MEASURES = ("std", "skew", "kurt", "sortino")
MIN_OBSERVATIONS = 60
DEFAULT_CUTPOINTS = (0.30, 0.70)


@dataclass(frozen=True)
class ReturnPanel:
    company_id: str
    dates: np.ndarray
    returns: np.ndarray
    risk_free: np.ndarray
    mkt_rf: np.ndarray
    smb: np.ndarray
    hml: np.ndarray

    def __post_init__(self):
        n = len(self.returns)
        for name in ("dates", "risk_free", "mkt_rf", "smb", "hml"):
            if len(getattr(self, name)) != n:
                raise InputShapeError(f"{name} has length {len(getattr(self, name))}, expected {n}")
        dates = np.asarray(self.dates)
        if n > 1 and not np.all(dates[1:] > dates[:-1]):
            raise InputShapeError(f"dates for {self.company_id!r} are not strictly increasing")

    @property
    def n(self) -> int:
        return len(self.returns)


@dataclass(frozen=True)
class FF3MFit:
    alpha: float
    beta_mkt: float
    beta_smb: float
    beta_hml: float
    residuals: np.ndarray

    @property
    def n(self) -> int:
        return len(self.residuals)

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([self.alpha, self.beta_mkt, self.beta_smb, self.beta_hml])


@dataclass(frozen=True)
class RiskProfile:
    sigma: float
    skew: float
    kurt: float
    sortino: float
    downside_sigma: float

    def value(self, measure: str) -> float:
        if measure not in MEASURES:
            raise KeyError(measure)
        return {"std": self.sigma, "skew": self.skew, "kurt": self.kurt, "sortino": self.sortino}[measure]


@dataclass(frozen=True)
class RiskLabel:
    measure: str
    bin: int

    def __post_init__(self):
        if self.bin not in (0, 1, 2):
            raise ValueError(f"bin must be 0, 1 or 2, got {self.bin}")
        if self.measure not in MEASURES:
            raise ValueError(f"unknown measure {self.measure!r}")


def _series(x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InputShapeError(f"expected a 1-d series, got shape {arr.shape}")
    return arr


def compute_excess_returns(returns, risk_free) -> np.ndarray:
    r = _series(returns)
    rf = _series(risk_free)
    if r.shape != rf.shape:
        raise InputShapeError(f"returns ({len(r)}) and risk-free ({len(rf)}) lengths differ")
    if len(r) == 0:
        raise InputShapeError("empty return series")
    return r - rf


def fit_ff3m(panel: ReturnPanel, min_obs: int = MIN_OBSERVATIONS) -> FF3MFit:
    """Ordinary least squares of excess returns on [1, MKT_RF, SMB, HML].

    Solved through a reduced QR decomposition of the design matrix, which
    avoids squaring its condition number the way the normal equations do.
    """
    if panel.n < min_obs:
        raise InsufficientObservations(
            f"{panel.company_id}: {panel.n} observations, at least {min_obs} required"
        )
    y = compute_excess_returns(panel.returns, panel.risk_free)
    X = np.column_stack([np.ones(panel.n), panel.mkt_rf, panel.smb, panel.hml]).astype(np.float64)
    Q, R = np.linalg.qr(X, mode="reduced")
    diag = np.abs(np.diag(R))
    col_scale = np.linalg.norm(X, axis=0)
    if np.any(diag <= 1e-10 * np.maximum(col_scale, np.finfo(float).tiny)):
        raise SingularDesign(f"{panel.company_id}: factor design matrix is rank deficient")
    coef = np.linalg.solve(R, Q.T @ y)
    residuals = y - X @ coef
    return FF3MFit(
        alpha=float(coef[0]),
        beta_mkt=float(coef[1]),
        beta_smb=float(coef[2]),
        beta_hml=float(coef[3]),
        residuals=residuals,
    )


def residual_std(residuals) -> float:
    # no re-centering: OLS residuals with an intercept are already mean zero
    eps = _series(residuals)
    if len(eps) == 0:
        raise InputShapeError("empty residual series")
    return float(np.sqrt(np.mean(eps * eps)))


def _central_moments(eps: np.ndarray) -> tuple[float, float, float]:
    d = eps - eps.mean()
    d2 = d * d
    return float(d2.mean()), float((d2 * d).mean()), float((d2 * d2).mean())


def _require_spread(eps: np.ndarray, m2: float):
    if np.ptp(eps) == 0.0 or m2 == 0.0:
        raise DegenerateDistribution("residuals have zero variance")


def residual_skewness(residuals) -> float:
    """Adjusted Fisher-Pearson skewness ``G1 = g1 * sqrt(n(n-1)) / (n-2)``."""
    eps = _series(residuals)
    n = len(eps)
    if n < 3:
        raise InsufficientObservations(f"skewness needs n >= 3, got {n}")
    m2, m3, _ = _central_moments(eps)
    _require_spread(eps, m2)
    g1 = m3 / m2**1.5
    return float(g1 * math.sqrt(n * (n - 1)) / (n - 2))


def residual_kurtosis(residuals) -> float:
    """Bias-corrected Fisher (excess) kurtosis from k-statistics."""
    eps = _series(residuals)
    n = len(eps)
    if n < 4:
        raise InsufficientObservations(f"kurtosis needs n >= 4, got {n}")
    m2, _, m4 = _central_moments(eps)
    _require_spread(eps, m2)
    g2 = m4 / (m2 * m2) - 3.0
    return float(((n + 1) * g2 + 6.0) * (n - 1) / ((n - 2) * (n - 3)))


def downside_deviation(residuals) -> float:
    eps = _series(residuals)
    if len(eps) == 0:
        raise InputShapeError("empty residual series")
    neg = np.minimum(eps, 0.0)
    return float(np.sqrt(np.mean(neg * neg)))


def sortino_ratio(residuals) -> float:
    """Mean residual over downside deviation with a zero minimum acceptable return."""
    eps = _series(residuals)
    sd = downside_deviation(eps)
    if sd == 0.0:
        raise DegenerateDownside("no negative residuals; downside deviation is zero")
    return float(eps.mean() / sd)


def risk_profile(residuals, *, allow_degenerate_downside: bool = False) -> RiskProfile:
    """All four statistics of a residual series.

    With ``allow_degenerate_downside`` a series without negative residuals
    gets ``sortino = inf`` instead of raising.
    """
    eps = _series(residuals)
    sd = downside_deviation(eps)
    if sd == 0.0:
        if not allow_degenerate_downside:
            raise DegenerateDownside("no negative residuals; downside deviation is zero")
        sortino = math.inf
    else:
        sortino = float(eps.mean() / sd)
    return RiskProfile(
        sigma=residual_std(eps),
        skew=residual_skewness(eps),
        kurt=residual_kurtosis(eps),
        sortino=sortino,
        downside_sigma=sd,
    )


def _cut_counts(n: int, cutpoints: Sequence[float]) -> tuple[int, int]:
    """Ranks below which items fall into bin 0 and bin <= 1.

    The cuts sit where linear-interpolation percentiles of the sorted values
    fall: a rank is in the low bin when it is at or below the ``c1`` quantile
    position ``c1 * (n - 1)``, and in the high bin when strictly above the
    ``c2`` position. Exact rational arithmetic keeps boundary cases stable.
    """
    c1, c2 = (Fraction(str(c)) for c in cutpoints)
    low = math.floor(c1 * (n - 1)) + 1
    upper = math.floor(c2 * (n - 1)) + 1
    return low, upper


def bin_counts(n: int, cutpoints: Sequence[float] = DEFAULT_CUTPOINTS) -> tuple[int, int, int]:
    low, upper = _cut_counts(n, cutpoints)
    return low, upper - low, n - upper


def bin_by_percentile(values, cutpoints: Sequence[float] = DEFAULT_CUTPOINTS) -> np.ndarray:
    """Three ordinal bins by rank, ties broken by input position."""
    v = _series(values)
    n = len(v)
    if n < 3:
        raise InsufficientObservations(f"binning needs at least 3 items, got {n}")
    c1, c2 = cutpoints
    if not 0.0 < c1 < c2 < 1.0:
        raise ValueError(f"cutpoints must satisfy 0 < c1 < c2 < 1, got {cutpoints}")
    if np.any(np.isnan(v)):
        raise InputShapeError("values contain NaN")
    order = np.argsort(v, kind="stable")
    low, upper = _cut_counts(n, cutpoints)
    ranked = np.empty(n, dtype=np.int64)
    ranked[:low] = 0
    ranked[low:upper] = 1
    ranked[upper:] = 2
    labels = np.empty(n, dtype=np.int64)
    labels[order] = ranked
    return labels


def rolling_origin_splits(years, window: int = 5) -> list[tuple[tuple[int, ...], int]]:
    ys = sorted({int(y) for y in years})
    if len(ys) < window + 1:
        raise InsufficientObservations(
            f"rolling-origin splits need at least {window + 1} years, got {len(ys)}"
        )
    if ys[-1] - ys[0] + 1 != len(ys):
        raise InputShapeError(f"years are not contiguous: {ys}")
    splits = []
    for test_year in ys[window:]:
        train = tuple(range(test_year - window, test_year))
        splits.append((train, test_year))
    return splits
