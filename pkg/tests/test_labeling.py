import numpy as np
import pandas as pd
import pytest

from riskrank.errors import DataError, EmptyOutput, IoError
from riskrank.labeling import LABEL_COLUMNS, label_map, label_returns, read_labels, read_returns, write_labels
from riskrank.riskmeasures import MEASURES, ReturnPanel, bin_by_percentile, fit_ff3m, risk_profile


def returns_frame(n_companies=5, n_days=70, year=2015, short=(), seed=0):
    rng = np.random.default_rng(seed)
    dates = pd.bdate_range(f"{year}-01-02", periods=n_days)
    factors = rng.normal(0, 0.01, (3, n_days))
    rows = []
    for c in range(n_companies):
        noise = rng.standard_t(5, n_days) * 0.002 * (c + 1)
        ret = 0.0001 + 0.9 * factors[0] + 0.2 * factors[1] - 0.1 * factors[2] + noise
        keep = 30 if f"C{c}" in short else n_days
        for t in range(keep):
            rows.append((dates[t].strftime("%Y-%m-%d"), f"C{c}", ret[t], 0.0001, *factors[:, t]))
    return pd.DataFrame(rows, columns=["date", "company_id", "ret", "rf", "mkt_rf", "smb", "hml"])


def hand_labels(df, measure):
    values = {}
    for cid, g in df.groupby("company_id"):
        panel = ReturnPanel(cid, np.arange(len(g)), g["ret"].to_numpy(), g["rf"].to_numpy(),
                            g["mkt_rf"].to_numpy(), g["smb"].to_numpy(), g["hml"].to_numpy())
        values[cid] = risk_profile(fit_ff3m(panel).residuals).value(measure)
    ids = sorted(values)
    return dict(zip(ids, bin_by_percentile([values[i] for i in ids]).tolist())), values


@pytest.fixture
def returns_csv(tmp_path):
    path = tmp_path / "returns.csv"
    returns_frame(short=("C5",), n_companies=6).to_csv(path, index=False)
    return path


class TestLabelReturns:
    def test_matches_hand_pipeline(self, returns_csv):
        df = read_returns(returns_csv)
        out = label_returns(df)
        full = df[df["company_id"] != "C5"]
        for measure in MEASURES:
            bins, values = hand_labels(full, measure)
            got = out[out["measure"] == measure]
            assert dict(zip(got["company_id"], got["bin"])) == bins
            for cid, v in zip(got["company_id"], got["value"]):
                assert v == pytest.approx(values[cid], rel=1e-12)

    def test_short_history_skipped(self, returns_csv, caplog):
        out = label_returns(read_returns(returns_csv))
        assert "C5" not in set(out["company_id"])
        assert any("C5" in r.message for r in caplog.records)

    def test_row_order(self, returns_csv):
        out = label_returns(read_returns(returns_csv))
        assert list(out.columns) == list(LABEL_COLUMNS)
        assert list(dict.fromkeys(out["measure"])) == list(MEASURES)

    def test_year_column_overrides_calendar(self, tmp_path):
        df = returns_frame(n_companies=3)
        df["year"] = 2099
        df.to_csv(tmp_path / "r.csv", index=False)
        assert set(label_returns(read_returns(tmp_path / "r.csv"))["year"]) == {2099}

    def test_nothing_labeled(self, tmp_path):
        returns_frame(n_companies=3, n_days=30).to_csv(tmp_path / "r.csv", index=False)
        with pytest.raises(EmptyOutput):
            label_returns(read_returns(tmp_path / "r.csv"))


class TestIO:
    def test_missing_file(self, tmp_path):
        with pytest.raises(IoError):
            read_returns(tmp_path / "absent.csv")

    def test_missing_columns(self, tmp_path):
        (tmp_path / "r.csv").write_text("date,company_id\n2015-01-02,A\n")
        with pytest.raises(IoError):
            read_returns(tmp_path / "r.csv")

    def test_bad_dates(self, tmp_path):
        df = returns_frame(n_companies=1, n_days=2)
        df["date"] = "yesterday"
        df.to_csv(tmp_path / "r.csv", index=False)
        with pytest.raises(IoError):
            read_returns(tmp_path / "r.csv")

    def test_labels_round_trip_is_byte_stable(self, returns_csv, tmp_path):
        out = label_returns(read_returns(returns_csv))
        write_labels(out, tmp_path / "a.csv")
        back = read_labels(tmp_path / "a.csv")
        write_labels(back, tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert label_map(read_labels(tmp_path / "a.csv", "std"))[("C0", 2015)] in (0, 1, 2)

    def test_bad_bins(self, tmp_path):
        (tmp_path / "l.csv").write_text("company_id,year,measure,value,bin\nA,2015,std,0.1,3\n")
        with pytest.raises(DataError):
            read_labels(tmp_path / "l.csv")
