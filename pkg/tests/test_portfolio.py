import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from aggfolio.aggregation import Rule
from aggfolio.errors import DataError, UniverseTooSmallError
from aggfolio.portfolio import (
    EQUAL,
    LONG,
    SHORT,
    VALUE,
    BottomNByCap,
    CrossSection,
    LegHoldings,
    StrategySeries,
    TopNByCap,
    blend_holdings,
    build_expert_legs,
    build_leg,
    decile_assign,
    filter_universe,
    holdings_frame,
    long_short_aggregate,
    mixture_holdings,
    monthly_turnover,
    series_frame,
    signed_book,
    strategy_turnover,
    target_returns,
)


def make_cs(returns, caps=None, month=0, **forecasts):
    n = len(returns)
    caps = np.ones(n) if caps is None else caps
    ids = np.asarray([f"S{i:04d}" for i in range(n)])
    return CrossSection(month, ids, returns, caps, {k: np.asarray(v, float) for k, v in forecasts.items()})


def test_decile_sorted_input():
    labels = decile_assign(np.arange(100.0))
    assert np.all(labels[90:] == 10)
    assert np.all(labels[:10] == 1)
    assert np.all(np.diff(labels) >= 0)


def test_decile_ties_by_asset_id():
    ids = np.asarray([f"S{i:02d}" for i in range(20)])[::-1]
    labels = decile_assign(np.zeros(20), ids)
    assert sorted(ids[labels == 1]) == ["S00", "S01"]
    assert sorted(ids[labels == 10]) == ["S18", "S19"]


@pytest.mark.parametrize("n", [10, 11, 19, 25, 99, 1001])
def test_extreme_deciles_have_floor_size(n):
    labels = decile_assign(np.random.default_rng(n).normal(size=n))
    assert np.sum(labels == 1) == n // 10
    assert np.sum(labels == 10) == n // 10
    assert set(labels) <= set(range(1, 11))


def test_too_small_universe():
    with pytest.raises(UniverseTooSmallError):
        decile_assign(np.arange(9.0))


def test_leg_perfect_sort_example():
    r = 0.01 * np.arange(1, 11)
    cs = make_cs(r, e=r)
    long_ret, long_h = build_leg(cs, "e", LONG, EQUAL)
    short_ret, short_h = build_leg(cs, "e", SHORT, EQUAL)
    assert long_ret == pytest.approx(0.10)
    assert short_ret == pytest.approx(0.01)
    assert long_h.weights.tolist() == [1.0]
    assert target_returns(cs, EQUAL) == pytest.approx((0.10, 0.01))


def test_value_weighted_leg_example():
    r = np.zeros(20)
    caps = np.ones(20)
    f = np.arange(20.0)
    r[18], r[19] = 0.10, 0.02
    caps[18], caps[19] = 1.0, 3.0
    ret, h = build_leg(make_cs(r, caps, e=f), "e", LONG, VALUE)
    assert ret == pytest.approx(0.25 * 0.10 + 0.75 * 0.02)
    assert h.as_dict() == {"S0018": 0.25, "S0019": 0.75}


def test_value_weighting_needs_positive_caps():
    caps = np.ones(10)
    caps[9] = 0.0
    with pytest.raises(DataError):
        build_leg(make_cs(np.zeros(10), caps, e=np.arange(10.0)), "e", LONG, VALUE)


def test_equal_weights_are_uniform():
    rng = np.random.default_rng(0)
    cs = make_cs(rng.normal(size=57), e=rng.normal(size=57))
    _, h = build_leg(cs, "e", SHORT, EQUAL)
    assert np.all(h.weights == 1 / 5)


def test_degenerate_target():
    cs = make_cs(np.full(30, 0.02))
    assert target_returns(cs) == pytest.approx((0.02, 0.02))


sections = st.integers(10, 60).flatmap(
    lambda n: st.tuples(
        hnp.arrays(float, n, elements=st.floats(-0.5, 0.5)),
        hnp.arrays(float, n, elements=st.floats(-1, 1)),
        hnp.arrays(float, n, elements=st.floats(0.1, 100)),
    )
)


@given(sections)
def test_leg_invariants(data):
    r, f, caps = data
    cs = make_cs(r, caps, e=f)
    for weighting in (EQUAL, VALUE):
        lr, lh = build_leg(cs, "e", LONG, weighting)
        sr, sh = build_leg(cs, "e", SHORT, weighting)
        assert not set(lh.asset_ids) & set(sh.asset_ids)
        for h in (lh, sh):
            assert np.all(h.weights >= 0)
            assert abs(h.weights.sum() - 1) <= 1e-12
            assert len(h.asset_ids) == len(r) // 10
        legs = build_expert_legs([cs], ["e"], weighting)
        assert legs.hl()[0, 0] == lr - sr


@given(sections)
def test_target_dominance_equal_weighting(data):
    r, f, caps = data
    cs = make_cs(r, caps, e=f)
    tl, ts = target_returns(cs, EQUAL)
    assert tl >= build_leg(cs, "e", LONG, EQUAL)[0] - 1e-12
    assert ts <= build_leg(cs, "e", SHORT, EQUAL)[0] + 1e-12


def test_value_weighted_target_can_be_beaten():
    # The realised top decile pairs a tiny-cap winner with a huge-cap asset
    # returning nothing. Swapping the huge-cap asset for a small loser does
    # better once weights follow caps.
    r = np.full(20, -0.01)
    caps = np.ones(20)
    r[19], r[18] = 0.5, 0.0
    caps[18] = 100.0
    f = np.zeros(20)
    f[19], f[17] = 2.0, 1.0
    cs = make_cs(r, caps, e=f)
    target_long, _ = target_returns(cs, VALUE)
    expert_long, _ = build_leg(cs, "e", LONG, VALUE)
    assert target_long == pytest.approx(0.5 / 101)
    assert expert_long == pytest.approx(0.245)
    assert expert_long > target_long


@given(sections, st.floats(0.01, 100))
def test_positive_scaling_of_forecasts(data, scale):
    r, f, caps = data
    cs = make_cs(r, caps, a=f, b=f * scale)
    for side in (LONG, SHORT):
        ra, ha = build_leg(cs, "a", side, VALUE)
        rb, hb = build_leg(cs, "b", side, VALUE)
        assert ra == rb
        assert np.array_equal(ha.asset_ids, hb.asset_ids)


def test_filter_universe_examples():
    caps = np.arange(1.0, 3001.0)
    cs = make_cs(np.zeros(3000), caps)
    top = filter_universe(cs, TopNByCap(1000))
    assert len(top) == 1000
    assert top.caps.min() == 2001.0
    small = make_cs(np.zeros(500), np.arange(1.0, 501.0))
    assert len(filter_universe(small, TopNByCap(1000))) == 500
    bottom = filter_universe(make_cs(np.zeros(100), np.arange(1.0, 101.0)), BottomNByCap(10))
    assert sorted(bottom.caps.tolist()) == list(np.arange(1.0, 11.0))
    with pytest.raises(UniverseTooSmallError):
        filter_universe(make_cs(np.zeros(100), np.arange(1.0, 101.0)), BottomNByCap(5))


def test_filter_universe_passes_forecasts_through():
    rng = np.random.default_rng(1)
    f = rng.normal(size=50)
    cs = make_cs(np.zeros(50), rng.uniform(1, 10, 50), e=f)
    top = filter_universe(cs, TopNByCap(20))
    lookup = dict(zip(cs.asset_ids, f))
    assert all(lookup[a] == v for a, v in zip(top.asset_ids, top.forecasts["e"]))


def test_turnover_examples():
    assert monthly_turnover({"a": 0.5, "b": -0.5}, {"a": 0.0, "b": 0.0}, {"a": 0.5, "b": -0.5}) == 0.0
    assert monthly_turnover({"a": 0.5, "b": 0.5}, {"a": 0.0, "b": 0.0}, {"a": 0.6, "b": 0.4}) == pytest.approx(0.2)
    assert monthly_turnover({"a": 1.0}, {"a": 0.10}, {"a": 1.0}) == pytest.approx(0.1)
    assert monthly_turnover({"a": 1.0}, {}, {"b": 1.0}) == 2.0


def test_signed_book_and_blend():
    lg = LegHoldings(0, LONG, np.array(["a", "b"]), np.array([0.5, 0.5]))
    sh = LegHoldings(0, SHORT, np.array(["c"]), np.array([1.0]))
    assert signed_book(lg, sh) == {"a": 0.5, "b": 0.5, "c": -1.0}
    other = LegHoldings(0, LONG, np.array(["b", "d"]), np.array([0.25, 0.75]))
    mix = blend_holdings([lg, other], [0.5, 0.5])
    assert mix.as_dict() == {"a": 0.25, "b": 0.375, "d": 0.375}
    assert mix.weights.sum() == pytest.approx(1.0)


def _panel(n_assets=60, n_months=40, seed=0):
    rng = np.random.default_rng(seed)
    sections = []
    for t in range(n_months):
        r = rng.normal(0, 0.05, n_assets)
        sections.append(
            make_cs(r, rng.uniform(1, 5, n_assets), month=t,
                    a=r + rng.normal(0, 0.02, n_assets), b=rng.normal(size=n_assets),
                    c=r + rng.normal(0, 0.1, n_assets))
        )
    return sections


def test_single_expert_mixture_is_the_expert():
    legs = build_expert_legs(_panel(), ["a"])
    res = long_short_aggregate(legs.long, legs.short, legs.target_long, legs.target_short, Rule.boa())
    assert np.array_equal(res.ls_series, legs.hl()[0])


def test_uni_mixture_is_mean_of_experts():
    legs = build_expert_legs(_panel(), ["a", "b", "c"])
    res = long_short_aggregate(legs.long, legs.short, legs.target_long, legs.target_short, Rule.uni())
    assert np.allclose(res.ls_series, legs.hl().mean(axis=0), atol=1e-12, rtol=0)


def test_legs_get_their_own_oracle():
    # One expert sorts the top of the book perfectly but not the bottom; the
    # other the reverse. Each aggregation should lock onto its specialist.
    rng = np.random.default_rng(3)
    n, months = 200, 500
    sections = []
    for t in range(months):
        r = rng.normal(0, 0.1, n)
        noise = rng.normal(0, 0.1, n)
        hi = r > np.median(r)
        top_expert = np.where(hi, r + 1.0, noise)
        bottom_expert = np.where(hi, noise, r - 1.0)
        sections.append(make_cs(r, month=t, top=top_expert, bottom=bottom_expert))
    legs = build_expert_legs(sections, ["top", "bottom"])
    res = long_short_aggregate(legs.long, legs.short, legs.target_long, legs.target_short, Rule.boa())
    assert res.long.weights_after[-1, 0] > 0.9
    assert res.short.weights_after[-1, 1] > 0.9


def test_pretrain_shifts_the_trajectory():
    legs = build_expert_legs(_panel(), ["a", "b"])
    full = long_short_aggregate(legs.long, legs.short, legs.target_long, legs.target_short, Rule.boa())
    warm = long_short_aggregate(legs.long, legs.short, legs.target_long, legs.target_short, Rule.boa(), pretrain=12)
    assert len(warm.long) == len(full.long) - 12
    assert np.array_equal(warm.long.weights, full.long.weights[12:])
    assert np.array_equal(warm.ls_series, full.ls_series[12:])


def test_mixture_holdings_and_turnover():
    sections = _panel()
    legs = build_expert_legs(sections, ["a", "b"])
    res = long_short_aggregate(legs.long, legs.short, legs.target_long, legs.target_short, Rule.boa(), pretrain=5)
    long_h, short_h = mixture_holdings(legs, res, pretrain=5)
    assert len(long_h) == len(res.long)
    for t, h in enumerate(long_h):
        assert abs(h.weights.sum() - 1) <= 1e-12
        month = sections[t + 5]
        lookup = dict(zip(month.asset_ids, month.returns))
        assert float(sum(w * lookup[a] for a, w in h.as_dict().items())) == pytest.approx(res.long_series[t])
    series = StrategySeries("mix", legs.months[5:], res.ls_series, long_h, short_h)
    to = strategy_turnover(series, sections)
    assert to.shape == (len(long_h) - 1,)
    assert np.all(to >= 0) and np.all(to <= 4.5)


def test_strategy_turnover_static_book_with_zero_returns():
    h = LegHoldings(0, LONG, np.array(["a"]), np.array([1.0]))
    s = LegHoldings(0, SHORT, np.array(["b"]), np.array([1.0]))
    cs = [CrossSection(m, np.array(["a", "b"]), np.zeros(2), np.ones(2)) for m in range(3)]
    hs = [LegHoldings(m, LONG, h.asset_ids, h.weights) for m in range(3)]
    ss = [LegHoldings(m, SHORT, s.asset_ids, s.weights) for m in range(3)]
    series = StrategySeries("x", [0, 1, 2], np.zeros(3), hs, ss)
    assert strategy_turnover(series, cs).tolist() == [0.0, 0.0]


def test_export_frames():
    lg = LegHoldings(0, LONG, np.array(["a"]), np.array([1.0]))
    sh = LegHoldings(0, SHORT, np.array(["b"]), np.array([1.0]))
    df = holdings_frame(["2000-01"], "x", [lg], [sh])
    assert list(df.columns) == ["date", "strategy", "side", "asset_id", "weight"]
    assert df["side"].tolist() == [LONG, SHORT]
    sf = series_frame(["2000-01", "2000-02"], {"x": [0.1, 0.2], "y": [0.0, 0.1]})
    assert list(sf.columns) == ["date", "strategy", "return"]
    assert len(sf) == 4
