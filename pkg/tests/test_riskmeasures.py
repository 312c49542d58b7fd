import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    oracle_kurt,
    oracle_ols,
    oracle_percentile_bins,
    oracle_sigma,
    oracle_skew,
    oracle_sortino,
)
from riskrank.errors import (
    DegenerateDistribution,
    DegenerateDownside,
    InputShapeError,
    InsufficientObservations,
    SingularDesign,
)
from riskrank.riskmeasures import (
    ReturnPanel,
    bin_by_percentile,
    bin_counts,
    compute_excess_returns,
    fit_ff3m,
    residual_kurtosis,
    residual_skewness,
    residual_std,
    risk_profile,
    rolling_origin_splits,
    sortino_ratio,
)

# reference yearly totals with their low / middle / high bin counts
YEARLY_BIN_COUNTS = {
    2024: (1371, 1828, 1371, 4570),
    2023: (1336, 1780, 1336, 4452),
    2022: (1283, 1711, 1283, 4277),
    2021: (1169, 1557, 1169, 3895),
    2020: (1049, 1398, 1049, 3496),
    2019: (970, 1294, 970, 3234),
    2018: (921, 1228, 921, 3070),
    2017: (858, 1144, 858, 2860),
    2016: (821, 1095, 821, 2737),
    2015: (782, 1043, 782, 2607),
    2014: (734, 979, 734, 2447),
    2013: (690, 920, 690, 2300),
}

SPLITS_2013_2024 = [
    ((2013, 2014, 2015, 2016, 2017), 2018),
    ((2014, 2015, 2016, 2017, 2018), 2019),
    ((2015, 2016, 2017, 2018, 2019), 2020),
    ((2016, 2017, 2018, 2019, 2020), 2021),
    ((2017, 2018, 2019, 2020, 2021), 2022),
    ((2018, 2019, 2020, 2021, 2022), 2023),
    ((2019, 2020, 2021, 2022, 2023), 2024),
]


def make_panel(rng, n=120, coef=(0.001, 0.8, 0.3, -0.2), noise=0.0, cid="X"):
    mkt, smb, hml = rng.normal(0, 0.01, (3, n))
    rf = rng.uniform(0, 1e-4, n)
    excess = coef[0] + coef[1] * mkt + coef[2] * smb + coef[3] * hml + noise * rng.standard_normal(n)
    dates = np.arange(n)
    return ReturnPanel(cid, dates, excess + rf, rf, mkt, smb, hml)


class TestExcessReturns:
    def test_identical_series(self):
        np.testing.assert_array_equal(compute_excess_returns([0.01, 0.02], [0.01, 0.02]), [0.0, 0.0])

    def test_zero_risk_free(self):
        np.testing.assert_array_equal(compute_excess_returns([0.03, -0.01], [0, 0]), [0.03, -0.01])

    def test_elementwise(self):
        np.testing.assert_allclose(compute_excess_returns([0.05, 0.01, 0.0], [0.01] * 3), [0.04, 0.0, -0.01],
                                   atol=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(InputShapeError):
            compute_excess_returns([0.1, 0.2], [0.1])


class TestFF3M:
    def test_zero_response(self):
        rng = np.random.default_rng(0)
        p = make_panel(rng, coef=(0, 0, 0, 0))
        p = ReturnPanel("Z", p.dates, p.risk_free.copy(), p.risk_free, p.mkt_rf, p.smb, p.hml)
        fit = fit_ff3m(p)
        np.testing.assert_allclose(fit.coefficients, 0.0, atol=1e-15)
        np.testing.assert_allclose(fit.residuals, 0.0, atol=1e-15)

    def test_planted_noiseless_recovery(self):
        rng = np.random.default_rng(1)
        fit = fit_ff3m(make_panel(rng, n=60))
        np.testing.assert_allclose(fit.coefficients, [0.001, 0.8, 0.3, -0.2], atol=1e-10)
        assert np.max(np.abs(fit.residuals)) < 1e-12

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p = make_panel(rng, n=int(rng.integers(60, 120)), coef=rng.normal(0, 1, 4), noise=0.01)
            fit = fit_ff3m(p)
            excess = p.returns - p.risk_free
            expect = oracle_ols(excess.tolist(), [p.mkt_rf.tolist(), p.smb.tolist(), p.hml.tolist()])
            np.testing.assert_allclose(fit.coefficients, expect, rtol=1e-9, atol=1e-12)

    def test_residual_orthogonality(self):
        rng = np.random.default_rng(3)
        p = make_panel(rng, n=252, noise=0.02)
        fit = fit_ff3m(p)
        n = fit.n
        for col in (np.ones(n), p.mkt_rf, p.smb, p.hml):
            assert abs(col @ fit.residuals) < 1e-8 * n
        assert abs(fit.residuals.mean()) < 1e-10

    def test_too_few_observations(self):
        with pytest.raises(InsufficientObservations):
            fit_ff3m(make_panel(np.random.default_rng(4), n=59))

    def test_singular_design(self):
        rng = np.random.default_rng(5)
        p = make_panel(rng, n=80, noise=0.01)
        p = ReturnPanel("S", p.dates, p.returns, p.risk_free, p.mkt_rf, 2.0 * p.mkt_rf, p.hml)
        with pytest.raises(SingularDesign):
            fit_ff3m(p)

    def test_dates_must_increase(self):
        rng = np.random.default_rng(6)
        p = make_panel(rng, n=60)
        with pytest.raises(InputShapeError):
            ReturnPanel("D", p.dates[::-1], p.returns, p.risk_free, p.mkt_rf, p.smb, p.hml)


class TestResidualStatistics:
    def test_std_examples(self):
        assert residual_std([0, 0, 0]) == 0.0
        assert residual_std([1, -1]) == 1.0
        with pytest.raises(InputShapeError):
            residual_std([])

    def test_skew_examples(self):
        assert residual_skewness([-1, 0, 1]) == 0.0
        assert residual_skewness([0, 0, 0, 1]) == pytest.approx(2.0, abs=1e-12)
        with pytest.raises(InsufficientObservations):
            residual_skewness([1.0, 2.0])
        with pytest.raises(DegenerateDistribution):
            residual_skewness([3.0, 3.0, 3.0])

    def test_kurt_examples(self):
        assert residual_kurtosis([-1, -1, 1, 1]) == pytest.approx(-6.0, abs=1e-12)
        with pytest.raises(DegenerateDistribution):
            residual_kurtosis([0.5] * 10)
        with pytest.raises(InsufficientObservations):
            residual_kurtosis([1.0, 2.0, 3.0])

    def test_sortino_examples(self):
        assert sortino_ratio([-1, 1]) == 0.0
        assert sortino_ratio([-2, -1, 1, 2, 3]) == pytest.approx(0.6, abs=1e-15)
        with pytest.raises(DegenerateDownside):
            sortino_ratio([0.1, 0.2, 0.3])

    def test_frozen_values(self):
        # oracle values for a fixed series, frozen at authoring time
        eps = [0.3, -1.2, 0.7, 2.5, -0.4, -0.9, 0.1, 1.6]
        assert residual_std(eps) == pytest.approx(1.2150102880222866, rel=1e-12)
        assert residual_skewness(eps) == pytest.approx(0.6106663795482615, rel=1e-12)
        assert residual_kurtosis(eps) == pytest.approx(-0.28090532557198283, rel=1e-10)
        assert sortino_ratio(eps) == pytest.approx(0.6149081502102739, rel=1e-12)

    def test_against_oracles(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(60, 253))
            eps = rng.standard_t(4, n) * rng.uniform(0.001, 0.05)
            eps = eps - eps.mean()
            lst = eps.tolist()
            assert residual_std(eps) == pytest.approx(oracle_sigma(lst), rel=1e-9)
            assert residual_skewness(eps) == pytest.approx(oracle_skew(lst), rel=1e-9)
            assert residual_kurtosis(eps) == pytest.approx(oracle_kurt(lst), rel=1e-9)
            assert sortino_ratio(eps) == pytest.approx(oracle_sortino(lst), abs=1e-12, rel=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=5, max_size=40),
           st.floats(0.1, 10.0))
    def test_kurtosis_scale_invariance(self, xs, c):
        eps = np.array(xs)
        if np.ptp(eps) < 1e-3:
            return
        assert residual_kurtosis(c * eps) == pytest.approx(residual_kurtosis(eps), rel=1e-7, abs=1e-9)
        assert residual_kurtosis(-c * eps) == pytest.approx(residual_kurtosis(eps), rel=1e-7, abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=5, max_size=40))
    def test_skew_odd_symmetry(self, xs):
        eps = np.array(xs)
        if np.ptp(eps) < 1e-3:
            return
        assert residual_skewness(-eps) == pytest.approx(-residual_skewness(eps), rel=1e-9, abs=1e-9)

    def test_profile_degenerate_downside(self):
        eps = [0.1, 0.2, 0.4, 0.3]
        with pytest.raises(DegenerateDownside):
            risk_profile(eps)
        assert risk_profile(eps, allow_degenerate_downside=True).sortino == float("inf")


class TestBinning:
    @pytest.mark.parametrize("year", sorted(YEARLY_BIN_COUNTS))
    def test_yearly_counts_reproduced(self, year):
        low, mid, high, total = YEARLY_BIN_COUNTS[year]
        assert bin_counts(total) == (low, mid, high)
        labels = bin_by_percentile(np.random.default_rng(year).random(total))
        assert tuple(np.bincount(labels, minlength=3)) == (low, mid, high)

    def test_one_to_ten(self):
        assert bin_by_percentile(np.arange(1, 11)).tolist() == [0, 0, 0, 1, 1, 1, 1, 2, 2, 2]

    def test_matches_linear_percentile_thresholds(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            v = rng.normal(size=int(rng.integers(3, 400)))
            assert bin_by_percentile(v).tolist() == oracle_percentile_bins(v.tolist())

    def test_ties_broken_by_position(self):
        assert bin_by_percentile([5, 5, 5, 5, 5, 5, 5, 5, 5, 5]).tolist() == [0, 0, 0, 1, 1, 1, 1, 2, 2, 2]

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(9)
        v = rng.normal(size=57)
        perm = rng.permutation(57)
        np.testing.assert_array_equal(bin_by_percentile(v[perm]), bin_by_percentile(v)[perm])

    def test_infinite_value_lands_high(self):
        assert bin_by_percentile([1.0, 2.0, np.inf, 0.5])[2] == 2

    def test_errors(self):
        with pytest.raises(InsufficientObservations):
            bin_by_percentile([1.0, 2.0])
        with pytest.raises(ValueError):
            bin_by_percentile([1.0, 2.0, 3.0], cutpoints=(0.7, 0.3))


class TestRollingSplits:
    def test_full_range(self):
        assert rolling_origin_splits(range(2013, 2025)) == SPLITS_2013_2024

    def test_minimal(self):
        assert rolling_origin_splits(range(2013, 2019)) == [((2013, 2014, 2015, 2016, 2017), 2018)]

    def test_too_short(self):
        with pytest.raises(InsufficientObservations):
            rolling_origin_splits(range(2013, 2018))

    def test_gap(self):
        with pytest.raises(InputShapeError):
            rolling_origin_splits([2013, 2014, 2015, 2016, 2017, 2019])

    def test_test_year_never_in_window(self):
        for train, test in rolling_origin_splits(range(2000, 2030), window=3):
            assert test not in train and max(train) < test
