"""Returns CSV in, risk labels CSV out."""

from __future__ import annotations

import csv
import logging
import math

import pandas as pd

from .errors import (
    DataError,
    DegenerateDistribution,
    EmptyOutput,
    InsufficientObservations,
    IoError,
    SingularDesign,
)
from .riskmeasures import MEASURES, ReturnPanel, bin_by_percentile, fit_ff3m, risk_profile

log = logging.getLogger(__name__)

RETURN_COLUMNS = ("date", "company_id", "ret", "rf", "mkt_rf", "smb", "hml")
LABEL_COLUMNS = ("company_id", "year", "measure", "value", "bin")


def read_returns(path) -> pd.DataFrame:
    """Parse a returns CSV; an optional ``year`` column overrides the calendar year."""
    try:
        df = pd.read_csv(path, dtype={"company_id": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IoError(f"cannot read returns file {path}: {exc}") from exc
    missing = [c for c in RETURN_COLUMNS if c not in df.columns]
    if missing:
        raise IoError(f"returns file {path} lacks columns {missing}")
    try:
        df["date"] = pd.to_datetime(df["date"], format="ISO8601")
    except (ValueError, TypeError) as exc:
        raise IoError(f"returns file {path}: dates are not ISO-8601 ({exc})") from exc
    if "year" not in df.columns:
        df["year"] = df["date"].dt.year
    return df.sort_values(["company_id", "year", "date"], kind="stable").reset_index(drop=True)


def panels(df: pd.DataFrame):
    for (cid, year), g in df.groupby(["company_id", "year"], sort=True):
        yield int(year), ReturnPanel(
            company_id=str(cid),
            dates=g["date"].to_numpy(),
            returns=g["ret"].to_numpy(float),
            risk_free=g["rf"].to_numpy(float),
            mkt_rf=g["mkt_rf"].to_numpy(float),
            smb=g["smb"].to_numpy(float),
            hml=g["hml"].to_numpy(float),
        )


def label_returns(df: pd.DataFrame, *, min_observations: int = 60, sortino_degenerate: str = "exclude",
                  measures=MEASURES) -> pd.DataFrame:
    """One row per (company, year, measure) with the statistic and its bin.

    Bins are ranked within each (year, measure) across companies. Company-years
    without enough observations, or with degenerate residuals, are skipped with
    a warning. A company without negative residuals gets an infinite Sortino
    ratio, kept (landing in the top bin) only under ``sortino_degenerate = top_bin``.
    """
    values: dict[tuple[int, str], list[tuple[str, float]]] = {}
    for year, panel in panels(df):
        try:
            fit = fit_ff3m(panel, min_obs=min_observations)
            prof = risk_profile(fit.residuals, allow_degenerate_downside=True)
        except (InsufficientObservations, SingularDesign, DegenerateDistribution) as exc:
            log.warning("skipping %s/%d: %s", panel.company_id, year, exc)
            continue
        for measure in measures:
            v = prof.value(measure)
            if measure == "sortino" and math.isinf(v) and sortino_degenerate == "exclude":
                log.warning("excluding %s/%d from sortino: no negative residuals", panel.company_id, year)
                continue
            values.setdefault((year, measure), []).append((panel.company_id, v))
    rows = []
    for (year, measure), items in sorted(values.items()):
        if len(items) < 3:
            log.warning("year %d measure %s has %d companies; need 3 to bin", year, measure, len(items))
            continue
        bins = bin_by_percentile([v for _, v in items])
        rows.extend((cid, year, measure, v, int(b)) for (cid, v), b in zip(items, bins))
    if not rows:
        raise EmptyOutput("no company-year produced a label")
    out = pd.DataFrame(rows, columns=list(LABEL_COLUMNS))
    order = {m: i for i, m in enumerate(MEASURES)}
    out["_m"] = out["measure"].map(order)
    out = out.sort_values(["year", "_m", "company_id"], kind="stable").drop(columns="_m")
    return out.reset_index(drop=True)


def write_labels(df: pd.DataFrame, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LABEL_COLUMNS)
        for r in df.itertuples(index=False):
            w.writerow([r.company_id, int(r.year), r.measure, repr(float(r.value)), int(r.bin)])


def read_labels(path, measure: str | None = None) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={"company_id": str}, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise IoError(f"cannot read labels file {path}: {exc}") from exc
    missing = [c for c in LABEL_COLUMNS if c not in df.columns]
    if missing:
        raise IoError(f"labels file {path} lacks columns {missing}")
    if measure is not None:
        df = df[df["measure"] == measure]
    if not df["bin"].isin([0, 1, 2]).all():
        raise DataError(f"labels file {path} has bins outside 0..2")
    return df.reset_index(drop=True)


def label_map(df: pd.DataFrame) -> dict[tuple[str, int], int]:
    return {(str(r.company_id), int(r.year)): int(r.bin) for r in df.itertuples(index=False)}
