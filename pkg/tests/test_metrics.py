import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aggfolio.errors import DataError, ParameterError
from aggfolio.metrics import (
    STATS_COLUMNS,
    DegenerateImportanceError,
    PortfolioStats,
    ZeroVolatilityError,
    annual_turnover,
    annualized_mean,
    annualized_volatility,
    cumulative_log_return,
    expert_importance,
    max_drawdown,
    max_one_month_loss,
    normalize_importance,
    rank_distribution,
    sharpe_ratio,
    stats_frame,
    summarize,
    yearly_sharpe,
)

monthly = arrays(np.float64, st.integers(1, 60), elements=st.floats(-0.5, 0.5, allow_nan=False))


def pair_scan_drawdown(r):
    c = np.cumsum(r)
    return max(c[i] - c[j] for i in range(len(c)) for j in range(i, len(c)))


def test_sharpe_example():
    assert sharpe_ratio([0.02, 0.0, 0.02, 0.0]) == pytest.approx(3.0, rel=1e-12)
    assert annualized_mean([0.02, 0.0, 0.02, 0.0]) == pytest.approx(0.12)
    assert annualized_volatility([0.02, 0.0, 0.02, 0.0]) == pytest.approx(0.04)


def test_constant_series():
    with pytest.raises(ZeroVolatilityError):
        sharpe_ratio([0.01] * 12)
    assert max_one_month_loss([0.01] * 12) == -0.01
    stats = summarize([0.01] * 12, strict=False)
    assert np.isnan(stats.sharpe)


def test_max_one_month_loss():
    assert max_one_month_loss([0.03, -0.08, 0.01, -0.02]) == 0.08


@pytest.mark.parametrize("r, dd", [([0.1, -0.2, 0.1], 0.2), ([0.01, 0.02, 0.03], 0.0), ([-0.3], 0.0)])
def test_max_drawdown_examples(r, dd):
    assert max_drawdown(r) == pytest.approx(dd, abs=1e-15)


def test_compound_drawdown():
    assert max_drawdown([0.1, -0.5], path="compound") == pytest.approx(0.5)
    with pytest.raises(ParameterError):
        max_drawdown([0.1], path="wat")
    with pytest.raises(DataError):
        max_drawdown([])


@given(monthly)
def test_max_drawdown_matches_pair_scan(r):
    assert max_drawdown(r) == pytest.approx(pair_scan_drawdown(r), abs=1e-12)
    assert max_drawdown(r) >= 0


@given(arrays(np.float64, st.integers(3, 60), elements=st.floats(-0.5, 0.5, allow_nan=False)),
       st.floats(1e-3, 1e3))
def test_sharpe_scale_invariance(r, lam):
    try:
        base = sharpe_ratio(r)
    except ZeroVolatilityError:
        return
    if annualized_volatility(r) < 1e-9:
        return
    scaled = r * lam
    assert sharpe_ratio(scaled) == pytest.approx(base, rel=1e-12, abs=1e-12)
    assert annualized_mean(scaled) == pytest.approx(lam * annualized_mean(r), rel=1e-12, abs=1e-15)
    assert annualized_volatility(scaled) == pytest.approx(lam * annualized_volatility(r), rel=1e-12)


def test_moments_are_non_excess():
    r = np.array([0.01, -0.02, 0.03, 0.0, -0.01, 0.02])
    s = summarize(r)
    d = r - r.mean()
    m2 = np.mean(d**2)
    assert s.kurt == pytest.approx(np.mean(d**4) / m2**2)
    assert s.skew == pytest.approx(np.mean(d**3) / m2**1.5)
    assert not s.kurtosis_is_excess


def test_turnover_and_log_return():
    assert annual_turnover([0.2, 0.4]) == pytest.approx(1.8)
    assert np.isnan(annual_turnover([]))
    assert cumulative_log_return([0.1, -0.1]) == pytest.approx(np.log(1.1) + np.log(0.9))


def test_non_finite_returns_rejected():
    with pytest.raises(DataError):
        summarize([0.1, np.nan, 0.2])
    with pytest.raises(DataError):
        summarize([0.1])


def test_yearly_sharpe():
    months = np.arange(24) + 2000 * 12
    r = np.tile([0.02, 0.0], 12)
    out = yearly_sharpe(r, months)
    assert list(out) == [2000, 2001]
    assert out[2000] == pytest.approx(np.sqrt(12) * 0.01 / np.std([0.02, 0.0] * 6, ddof=1))


def test_rank_distribution_dominance():
    values = pd.DataFrame({2000: [2.0, 1.0], 2001: [3.0, -1.0], 2002: [0.5, 0.1]}, index=["A", "B"])
    counts = rank_distribution(values)
    assert counts.loc["A"].tolist() == [3, 0]
    assert counts.loc["B"].tolist() == [0, 3]


def test_rank_distribution_ties_by_name():
    values = pd.DataFrame({y: [1.0, 1.0, 1.0] for y in range(3)}, index=["c", "a", "b"])
    counts = rank_distribution(values)
    assert counts.loc["a", 1] == 3 and counts.loc["b", 2] == 3 and counts.loc["c", 3] == 3


def test_rank_distribution_missing():
    with pytest.raises(DataError):
        rank_distribution(pd.DataFrame({2000: [1.0, np.nan]}, index=["a", "b"]))


@given(st.integers(1, 14), st.integers(1, 30), st.integers(0, 2**31 - 1))
def test_rank_distribution_conservation(n_strategies, n_years, seed):
    rng = np.random.default_rng(seed)
    values = pd.DataFrame(rng.integers(0, 3, (n_strategies, n_years)).astype(float),
                          index=[f"s{i}" for i in range(n_strategies)])
    counts = rank_distribution(values)
    assert (counts.sum(axis=0) == n_years).all()
    assert (counts.sum(axis=1) == n_years).all()


def test_rank_distribution_14_by_30():
    rng = np.random.default_rng(0)
    values = pd.DataFrame(rng.normal(size=(14, 30)), index=[f"s{i:02d}" for i in range(14)],
                          columns=range(1987, 2017))
    assert (rank_distribution(values).sum(axis=0) == 30).all()


def test_importance_normalisation_examples():
    assert normalize_importance({"a": 0.2, "b": 0.3, "c": 0.5}) == pytest.approx({"a": 0.2, "b": 0.3, "c": 0.5})
    out = normalize_importance({"a": 0.5, "b": -0.5})
    assert out == {"a": 0.5, "b": -0.5}
    with pytest.raises(DegenerateImportanceError):
        normalize_importance({"a": 0.0, "b": 0.0})


deltas = st.one_of(st.just(0.0), st.floats(1e-6, 10), st.floats(-10, -1e-6))


@given(st.dictionaries(st.text(min_size=1, max_size=3), deltas, min_size=1, max_size=8))
def test_importance_magnitudes_sum_to_one(raw):
    if sum(abs(v) for v in raw.values()) == 0:
        return
    out = normalize_importance(raw)
    assert sum(abs(v) for v in out.values()) == pytest.approx(1.0)
    assert all(np.sign(out[k]) == np.sign(raw[k]) for k in raw)


def _stats(sharpe, ann_ret=0.1):
    return PortfolioStats(ann_ret, 0.1, 0, 3, sharpe, 0.1, 0.05, cum_log_ret=1.0)


def test_expert_importance_and_inactive_expert():
    out = expert_importance(_stats(2.0), {"a": _stats(1.5), "b": _stats(2.0)}, "sharpe")
    assert out == {"a": 1.0, "b": 0.0}
    with pytest.raises(ParameterError):
        expert_importance(_stats(2.0), {"a": _stats(1.0)}, "skew")


def test_stats_frame_columns():
    df = stats_frame({"PtfBOA": summarize([0.01, -0.02, 0.03], monthly_turnovers=[0.5])})
    assert list(df.columns) == STATS_COLUMNS
    assert df["turnover"].iat[0] == pytest.approx(3.0)
