"""Decile-sorted long-short portfolios and their dual aggregation.

Every month each expert's forecasts sort the cross-section into deciles.
The long leg buys the top decile, the short leg the bottom one, each leg
being a fully invested unit portfolio. The target is the same construction
sorted on realised returns. Long legs are aggregated against the long
target and short legs against the short target; the aggregated
long-short return is the difference of the two mixtures.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

from .aggregation import Rule, Trajectory, run_online, warm_start
from .errors import DataError, ShapeError, UniverseTooSmallError
from .loss import LossKind

N_DECILES = 10
LONG, SHORT = "long", "short"
EQUAL, VALUE = "equal", "value"


@dataclass
class CrossSection:
    """One month of tradable assets.

    ``returns`` are the returns realised over the holding month; ``forecasts``
    maps expert name to one forecast per asset, aligned with ``asset_ids``.
    """

    month: int
    asset_ids: np.ndarray
    returns: np.ndarray
    caps: np.ndarray
    forecasts: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.asset_ids = np.asarray(self.asset_ids)
        self.returns = np.asarray(self.returns, dtype=float)
        self.caps = np.asarray(self.caps, dtype=float)
        n = self.asset_ids.shape[0]
        if self.returns.shape != (n,) or self.caps.shape != (n,):
            raise ShapeError("asset ids, returns and caps must have equal length")
        for name, f in self.forecasts.items():
            f = np.asarray(f, dtype=float)
            if f.shape != (n,):
                raise ShapeError(f"forecasts of {name!r} do not match the cross-section")
            self.forecasts[name] = f

    def __len__(self):
        return self.asset_ids.shape[0]

    def subset(self, index) -> "CrossSection":
        return CrossSection(
            month=self.month,
            asset_ids=self.asset_ids[index],
            returns=self.returns[index],
            caps=self.caps[index],
            forecasts={k: v[index] for k, v in self.forecasts.items()},
        )


@dataclass(frozen=True)
class LegHoldings:
    month: int
    side: str
    asset_ids: np.ndarray
    weights: np.ndarray

    def as_dict(self) -> dict:
        return dict(zip(self.asset_ids.tolist(), self.weights.tolist()))


@dataclass
class StrategySeries:
    """Monthly returns of a strategy, optionally with the legs it held."""

    label: str
    months: list[int]
    returns: np.ndarray
    long_holdings: list[LegHoldings] | None = None
    short_holdings: list[LegHoldings] | None = None

    def __post_init__(self):
        self.returns = np.asarray(self.returns, dtype=float)
        if len(self.months) != self.returns.shape[0]:
            raise ShapeError(f"{self.label}: {len(self.months)} months vs {self.returns.shape[0]} returns")
        for legs in (self.long_holdings, self.short_holdings):
            if legs is not None and [h.month for h in legs] != list(self.months):
                raise ShapeError(f"{self.label}: holdings are not aligned with returns")


@dataclass(frozen=True)
class TopNByCap:
    n: int


@dataclass(frozen=True)
class BottomNByCap:
    n: int


def _sort_order(scores, asset_ids) -> np.ndarray:
    """Ascending by score, ties by ascending asset id."""
    return np.lexsort((np.asarray(asset_ids), np.asarray(scores, dtype=float)))


def _decile_size(n: int) -> int:
    if n < N_DECILES:
        raise UniverseTooSmallError(f"decile sort needs at least {N_DECILES} assets, got {n}")
    return n // N_DECILES


def decile_assign(forecasts, asset_ids=None) -> np.ndarray:
    """Decile label 1 (lowest forecasts) to 10 (highest) for each asset.

    The two extreme deciles hold exactly ``N // 10`` assets; the interior
    deciles split the remainder in sorted order.
    """
    forecasts = np.asarray(forecasts, dtype=float)
    n = forecasts.shape[0]
    m = _decile_size(n)
    ids = np.arange(n) if asset_ids is None else np.asarray(asset_ids)
    order = _sort_order(forecasts, ids)
    labels = np.empty(n, dtype=int)
    labels[order[:m]] = 1
    labels[order[n - m :]] = N_DECILES
    for d, chunk in enumerate(np.array_split(order[m : n - m], N_DECILES - 2), start=2):
        labels[chunk] = d
    return labels


def _leg_weights(caps, weighting) -> np.ndarray:
    if weighting == EQUAL:
        return np.full(caps.shape[0], 1.0 / caps.shape[0])
    if weighting == VALUE:
        if np.any(~(caps > 0)):
            raise DataError("value weighting needs strictly positive market caps")
        return caps / caps.sum()
    raise ValueError(f"unknown weighting {weighting!r}")


def leg_from_scores(cs: CrossSection, scores, side: str, weighting: str = EQUAL):
    """Return and holdings of the decile leg picked by ``scores``."""
    m = _decile_size(len(cs))
    order = _sort_order(scores, cs.asset_ids)
    if side == LONG:
        idx = order[-m:]
    elif side == SHORT:
        idx = order[:m]
    else:
        raise ValueError(f"unknown side {side!r}")
    w = _leg_weights(cs.caps[idx], weighting)
    holdings = LegHoldings(cs.month, side, cs.asset_ids[idx], w)
    return float(w @ cs.returns[idx]), holdings


def build_leg(cs: CrossSection, expert: str, side: str, weighting: str = EQUAL):
    return leg_from_scores(cs, cs.forecasts[expert], side, weighting)


def target_returns(cs: CrossSection, weighting: str = EQUAL) -> tuple[float, float]:
    """Long and short returns of the perfect-foresight decile legs.

    Under equal weighting the long target is at least any expert's long leg
    and the short target at most any expert's short leg. Under value
    weighting that dominance is not guaranteed, since a small-cap winner can
    be outweighed by a large-cap member of the realised top decile.
    """
    long_ret, _ = leg_from_scores(cs, cs.returns, LONG, weighting)
    short_ret, _ = leg_from_scores(cs, cs.returns, SHORT, weighting)
    return long_ret, short_ret


def filter_universe(cs: CrossSection, selector) -> CrossSection:
    """Keep the ``n`` largest (or smallest) caps, ties by asset id."""
    if isinstance(selector, TopNByCap):
        order = np.lexsort((cs.asset_ids, -cs.caps))
    elif isinstance(selector, BottomNByCap):
        order = np.lexsort((cs.asset_ids, cs.caps))
    else:
        raise ValueError(f"unknown universe selector {selector!r}")
    keep = np.sort(order[: min(selector.n, len(cs))])
    if keep.shape[0] < N_DECILES:
        raise UniverseTooSmallError(f"filtered universe has {keep.shape[0]} assets, need {N_DECILES}")
    return cs.subset(keep)


def monthly_turnover(holdings_t: Mapping, returns_next: Mapping, holdings_next: Mapping) -> float:
    """Trading needed to move from one signed book to the next.

    ``sum_i |w_next_i - w_i * (1 + r_i)|`` over the union of assets; missing
    weights count as zero, a missing return as zero drift.
    """
    total = 0.0
    for asset in sorted(set(holdings_t) | set(holdings_next), key=str):
        drifted = holdings_t.get(asset, 0.0) * (1.0 + returns_next.get(asset, 0.0))
        total += abs(holdings_next.get(asset, 0.0) - drifted)
    return total


def signed_book(long_leg: LegHoldings, short_leg: LegHoldings) -> dict:
    """Combined book: long weights positive, short weights negative."""
    book = long_leg.as_dict()
    for asset, w in short_leg.as_dict().items():
        book[asset] = book.get(asset, 0.0) - w
    return book


def blend_holdings(legs: Sequence[LegHoldings], weights) -> LegHoldings:
    """Holdings of a convex mixture of legs from the same month and side."""
    weights = np.asarray(weights, dtype=float)
    if len(legs) != weights.shape[0]:
        raise ShapeError("one mixture weight per leg is required")
    acc: dict = {}
    for leg, wk in zip(legs, weights):
        if wk == 0.0:
            continue
        for asset, w in zip(leg.asset_ids.tolist(), leg.weights.tolist()):
            acc[asset] = acc.get(asset, 0.0) + wk * w
    ids = sorted(acc)
    return LegHoldings(legs[0].month, legs[0].side, np.asarray(ids), np.asarray([acc[a] for a in ids]))


def strategy_turnover(series: StrategySeries, cross_sections: Sequence[CrossSection]) -> np.ndarray:
    """Monthly turnover between consecutive books of a strategy.

    The book held in month ``t`` drifts with that month's realised returns
    before being rebalanced into month ``t + 1``'s book.
    """
    if series.long_holdings is None or series.short_holdings is None:
        raise DataError(f"{series.label} carries no holdings")
    by_month = {cs.month: cs for cs in cross_sections}
    books = [signed_book(lg, sh) for lg, sh in zip(series.long_holdings, series.short_holdings)]
    out = np.empty(max(len(books) - 1, 0))
    for t in range(len(books) - 1):
        cs = by_month[series.months[t]]
        drift = dict(zip(cs.asset_ids.tolist(), cs.returns.tolist()))
        out[t] = monthly_turnover(books[t], drift, books[t + 1])
    return out


@dataclass
class ExpertLegs:
    """Per-expert leg returns (K x T) and holdings, plus the targets (T,)."""

    names: list[str]
    months: list[int]
    long: np.ndarray
    short: np.ndarray
    target_long: np.ndarray
    target_short: np.ndarray
    long_holdings: list[list[LegHoldings]]
    short_holdings: list[list[LegHoldings]]

    def hl(self) -> np.ndarray:
        return self.long - self.short

    def expert_series(self, k: int) -> StrategySeries:
        return StrategySeries(
            self.names[k], self.months, self.long[k] - self.short[k],
            self.long_holdings[k], self.short_holdings[k],
        )

    def drop(self, k: int) -> "ExpertLegs":
        keep = [j for j in range(len(self.names)) if j != k]
        return ExpertLegs(
            [self.names[j] for j in keep], self.months, self.long[keep], self.short[keep],
            self.target_long, self.target_short,
            [self.long_holdings[j] for j in keep], [self.short_holdings[j] for j in keep],
        )

    def window(self, start: int, stop: int | None = None) -> "ExpertLegs":
        sl = slice(start, stop)
        return ExpertLegs(
            self.names, self.months[sl], self.long[:, sl], self.short[:, sl],
            self.target_long[sl], self.target_short[sl],
            [h[sl] for h in self.long_holdings], [h[sl] for h in self.short_holdings],
        )


def build_expert_legs(cross_sections: Sequence[CrossSection], expert_names, weighting=EQUAL) -> ExpertLegs:
    names = list(expert_names)
    n_months = len(cross_sections)
    long = np.empty((len(names), n_months))
    short = np.empty((len(names), n_months))
    tl = np.empty(n_months)
    ts = np.empty(n_months)
    lh = [[] for _ in names]
    sh = [[] for _ in names]
    for t, cs in enumerate(cross_sections):
        tl[t], ts[t] = target_returns(cs, weighting)
        for k, name in enumerate(names):
            long[k, t], hl = build_leg(cs, name, LONG, weighting)
            short[k, t], hs = build_leg(cs, name, SHORT, weighting)
            lh[k].append(hl)
            sh[k].append(hs)
    return ExpertLegs(names, [cs.month for cs in cross_sections], long, short, tl, ts, lh, sh)


@dataclass
class LongShortResult:
    long: Trajectory
    short: Trajectory

    @property
    def long_series(self) -> np.ndarray:
        return self.long.predictions

    @property
    def short_series(self) -> np.ndarray:
        return self.short.predictions

    @property
    def ls_series(self) -> np.ndarray:
        return self.long.predictions - self.short.predictions


def long_short_aggregate(
    expert_long,
    expert_short,
    target_long,
    target_short,
    rule: Rule,
    loss: LossKind | None = None,
    pretrain: int = 0,
    linearize: bool = True,
) -> LongShortResult:
    """Aggregate long and short legs independently against their targets.

    The first ``pretrain`` steps only warm the two aggregation states; the
    returned trajectories cover the remaining steps.
    """
    expert_long = np.asarray(expert_long, dtype=float)
    expert_short = np.asarray(expert_short, dtype=float)
    target_long = np.asarray(target_long, dtype=float)
    target_short = np.asarray(target_short, dtype=float)
    if expert_long.shape != expert_short.shape or target_long.shape != target_short.shape:
        raise ShapeError("long and short inputs must be aligned")
    legs = []
    for streams, target in ((expert_long, target_long), (expert_short, target_short)):
        state = None
        if pretrain:
            state = warm_start(rule, streams[:, :pretrain], target[:pretrain], loss, linearize)
        legs.append(run_online(rule, streams[:, pretrain:], target[pretrain:], loss, state, linearize))
    return LongShortResult(*legs)


def mixture_holdings(legs: ExpertLegs, result: LongShortResult, pretrain: int = 0):
    """Blend expert holdings with the mixture weights used each month."""
    long_h, short_h = [], []
    for t in range(len(result.long)):
        src = t + pretrain
        long_h.append(blend_holdings([h[src] for h in legs.long_holdings], result.long.weights[t]))
        short_h.append(blend_holdings([h[src] for h in legs.short_holdings], result.short.weights[t]))
    return long_h, short_h


def holdings_frame(dates, strategy: str, long_h, short_h) -> pd.DataFrame:
    """Rows ``date, strategy, side, asset_id, weight``."""
    frames = []
    for date, lg, sh in zip(dates, long_h, short_h):
        for leg in (lg, sh):
            frames.append(
                pd.DataFrame(
                    {
                        "date": date,
                        "strategy": strategy,
                        "side": leg.side,
                        "asset_id": leg.asset_ids,
                        "weight": leg.weights,
                    }
                )
            )
    if not frames:
        return pd.DataFrame(columns=["date", "strategy", "side", "asset_id", "weight"])
    return pd.concat(frames, ignore_index=True)


def series_frame(dates, series: Mapping[str, np.ndarray]) -> pd.DataFrame:
    """Rows ``date, strategy, return``, strategies in insertion order."""
    dates = list(dates)
    rows = []
    for name, values in series.items():
        values = np.asarray(values, dtype=float)
        if values.shape != (len(dates),):
            raise ShapeError(f"series {name!r} is not aligned with the dates")
        rows.append(pd.DataFrame({"date": dates, "strategy": name, "return": values}))
    return pd.concat(rows, ignore_index=True)
