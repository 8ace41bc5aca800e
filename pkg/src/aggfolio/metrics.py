"""Portfolio statistics, rank distributions and leave-one-out importance."""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np
import pandas as pd
from scipy import stats

from .errors import DataError, NumericalError, ParameterError

STATS_COLUMNS = [
    "strategy", "ann_ret", "ann_vol", "skew", "kurt", "sharpe", "max_dd", "max_1m_loss", "turnover",
]
IMPORTANCE_INDICATORS = ("ann_ret", "ann_vol", "sharpe", "cum_log_ret")


class ZeroVolatilityError(NumericalError):
    pass


class DegenerateImportanceError(NumericalError):
    pass


@dataclass(frozen=True)
class PortfolioStats:
    ann_ret: float
    ann_vol: float
    skew: float
    kurt: float
    sharpe: float
    max_dd: float
    max_1m_loss: float
    turnover: float = float("nan")
    cum_log_ret: float = float("nan")
    kurtosis_is_excess: bool = False

    def as_row(self, strategy: str) -> dict:
        row = {"strategy": strategy}
        row.update({k: v for k, v in asdict(self).items() if k in STATS_COLUMNS})
        return row


def _returns(series) -> np.ndarray:
    r = np.asarray(getattr(series, "returns", series), dtype=float).ravel()
    if not np.all(np.isfinite(r)):
        raise DataError("return series contains non-finite values")
    return r


def annualized_mean(returns, periods_per_year: int = 12) -> float:
    return periods_per_year * float(np.mean(_returns(returns)))


def annualized_volatility(returns, periods_per_year: int = 12) -> float:
    return float(np.sqrt(periods_per_year) * np.std(_returns(returns), ddof=1))


def sharpe_ratio(returns, periods_per_year: int = 12) -> float:
    r = _returns(returns)
    vol = annualized_volatility(r, periods_per_year)
    # Exact zero only happens for constant series; anything within rounding
    # of the mean is treated the same way.
    if vol <= 1e-15 * max(1.0, float(np.max(np.abs(r)))):
        raise ZeroVolatilityError("volatility is zero; Sharpe ratio undefined")
    return annualized_mean(r, periods_per_year) / vol


def max_drawdown(returns, path: str = "log") -> float:
    """Largest fall of the cumulative return path between two dates.

    ``path="log"`` sums monthly returns; ``path="compound"`` measures the
    relative fall of compounded wealth.
    """
    r = _returns(returns)
    if r.size == 0:
        raise DataError("max drawdown of an empty series")
    if path == "log":
        c = np.cumsum(r)
        return float(np.max(np.maximum.accumulate(c) - c))
    if path == "compound":
        wealth = np.cumprod(1.0 + r)
        peak = np.maximum.accumulate(wealth)
        return float(np.max(1.0 - wealth / peak))
    raise ParameterError(f"unknown drawdown path {path!r}")


def max_one_month_loss(returns) -> float:
    return -float(np.min(_returns(returns)))


def annual_turnover(monthly_turnovers, periods_per_year: int = 12) -> float:
    """One-sided annual turnover: half the two-sided monthly average, annualised."""
    t = np.asarray(monthly_turnovers, dtype=float)
    if t.size == 0:
        return float("nan")
    return periods_per_year * float(np.mean(t)) / 2.0


def cumulative_log_return(returns) -> float:
    return float(np.sum(np.log1p(_returns(returns))))


def summarize(
    series,
    periods_per_year: int = 12,
    monthly_turnovers=None,
    risk_free=None,
    drawdown: str = "log",
    strict: bool = True,
) -> PortfolioStats:
    """Table-style statistics of a monthly return series.

    Skewness and kurtosis are the standardised third and fourth central
    moments; kurtosis is not in excess of 3. With ``strict=False`` a
    zero-volatility series yields a NaN Sharpe ratio instead of raising.
    """
    r = _returns(series)
    if r.size < 2:
        raise DataError("need at least two observations")
    if risk_free is not None:
        r = r - np.asarray(risk_free, dtype=float)
    try:
        sharpe = sharpe_ratio(r, periods_per_year)
    except ZeroVolatilityError:
        if strict:
            raise
        sharpe = float("nan")
    with np.errstate(invalid="ignore", divide="ignore"), warnings.catch_warnings():
        # scipy warns about cancellation on near-constant series; the
        # moments are then NaN or noise, which is what the table shows.
        warnings.simplefilter("ignore", RuntimeWarning)
        skew = float(stats.skew(r, bias=True))
        kurt = float(stats.kurtosis(r, fisher=False, bias=True))
    return PortfolioStats(
        ann_ret=annualized_mean(r, periods_per_year),
        ann_vol=annualized_volatility(r, periods_per_year),
        skew=skew,
        kurt=kurt,
        sharpe=sharpe,
        max_dd=max_drawdown(r, drawdown),
        max_1m_loss=max_one_month_loss(r),
        turnover=annual_turnover(monthly_turnovers) if monthly_turnovers is not None else float("nan"),
        cum_log_ret=cumulative_log_return(r),
    )


def yearly_sharpe(returns, months) -> dict[int, float]:
    """Annual Sharpe ratio per calendar year (months are ``year*12+m`` ints)."""
    r = _returns(returns)
    years = np.asarray(months) // 12
    return {int(y): sharpe_ratio(r[years == y]) for y in np.unique(years)}


def rank_distribution(values: pd.DataFrame) -> pd.DataFrame:
    """Count how often each strategy takes each rank across years.

    ``values`` has one row per strategy and one column per year. Rank 1 is
    the highest value; ties go to the alphabetically first strategy.
    """
    if values.isna().any().any():
        raise DataError("metric values are missing for some strategy-year")
    names = sorted(values.index.tolist())
    n = len(names)
    counts = pd.DataFrame(0, index=names, columns=range(1, n + 1))
    for year in values.columns:
        col = values[year]
        order = sorted(names, key=lambda s: (-col[s], s))
        for rank, name in enumerate(order, start=1):
            counts.loc[name, rank] += 1
    counts.columns.name = "rank"
    return counts


def expert_importance(full_stats: PortfolioStats, loo_stats: dict, indicator: str = "sharpe") -> dict:
    """Normalised drop in an indicator when each expert is left out.

    ``raw_k = indicator(full) - indicator(without k)``, divided by the sum
    of absolute raw values.
    """
    if indicator not in IMPORTANCE_INDICATORS:
        raise ParameterError(f"unknown indicator {indicator!r}")
    full = getattr(full_stats, indicator)
    raw = {k: full - getattr(s, indicator) for k, s in loo_stats.items()}
    return normalize_importance(raw)


def normalize_importance(raw: dict) -> dict:
    total = sum(abs(v) for v in raw.values())
    if total == 0 or not np.isfinite(total):
        raise DegenerateImportanceError("all leave-one-out deltas are zero")
    return {k: v / total for k, v in raw.items()}


def stats_frame(stats_by_strategy: dict) -> pd.DataFrame:
    rows = [s.as_row(name) for name, s in stats_by_strategy.items()]
    return pd.DataFrame(rows, columns=STATS_COLUMNS)
