"""Expert forecasts: ingestion, a trainable linear Huber model, bagging and
synthetic experts used for verification scenarios.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Union

import numpy as np
import pandas as pd

from .data import format_month, parse_month
from .errors import DataError, ParameterError, ShapeError
from .loss import DEFAULT_HUBER_THRESHOLD, huber_gradient, huber_loss
from .seeds import rng_for

FORECAST_COLUMNS = ["expert", "asset_id", "date", "forecast"]


@dataclass(frozen=True)
class ExternalExpert:
    name: str
    path: str


@dataclass(frozen=True)
class LinearHuberExpert:
    """Linear model fit by full-batch gradient descent on the Huber loss.

    ``subsample`` below 1 draws that fraction of training rows without
    replacement, from a stream keyed by ``seed`` and the refit window.
    """

    name: str
    xi: float = DEFAULT_HUBER_THRESHOLD
    learning_rate: float = 0.1
    epochs: int = 300
    l1: float = 0.0
    seed: int = 0
    subsample: float = 1.0


@dataclass(frozen=True)
class NoisyOracleExpert:
    """Realised return plus Gaussian noise.

    ``sigma`` is either a constant or a tuple of ``(start_month, sigma)``
    breakpoints, sorted by month; months before the first breakpoint use its
    value.
    """

    name: str
    sigma: Union[float, tuple] = 0.0
    seed: int = 0

    def sigma_at(self, months) -> np.ndarray:
        months = np.asarray(months)
        if np.isscalar(self.sigma) or np.ndim(self.sigma) == 0:
            return np.full(months.shape, float(self.sigma))
        starts = np.asarray([m for m, _ in self.sigma])
        values = np.asarray([s for _, s in self.sigma], dtype=float)
        idx = np.clip(np.searchsorted(starts, months, side="right") - 1, 0, None)
        return values[idx]


@dataclass(frozen=True)
class ConstantExpert:
    name: str
    value: float = 0.0


ExpertSpec = Union[ExternalExpert, LinearHuberExpert, NoisyOracleExpert, ConstantExpert]


class ForecastPanel:
    """Forecasts keyed by (expert, asset_id, month)."""

    def __init__(self, frame: pd.DataFrame):
        frame = frame[["expert", "asset_id", "month", "forecast"]].copy()
        frame["expert"] = frame["expert"].astype(str)
        frame["asset_id"] = frame["asset_id"].astype(str)
        frame["month"] = frame["month"].astype(np.int64)
        frame["forecast"] = frame["forecast"].astype(float)
        dup = frame.duplicated(["expert", "asset_id", "month"])
        if dup.any():
            row = frame[dup].iloc[0]
            raise DataError(
                f"duplicate forecast for expert {row.expert!r}, asset {row.asset_id!r}, "
                f"date {format_month(int(row.month))}"
            )
        self.frame = frame.reset_index(drop=True)

    def __len__(self):
        return len(self.frame)

    def __eq__(self, other):
        if not isinstance(other, ForecastPanel):
            return NotImplemented
        key = ["expert", "month", "asset_id"]
        a = self.frame.sort_values(key).reset_index(drop=True)
        b = other.frame.sort_values(key).reset_index(drop=True)
        return a.equals(b)

    @property
    def experts(self) -> list[str]:
        return sorted(self.frame["expert"].unique().tolist())

    def for_expert(self, name: str) -> pd.Series:
        """Forecasts of one expert indexed by (asset_id, month)."""
        sub = self.frame[self.frame["expert"] == name]
        if sub.empty:
            raise DataError(f"no forecasts for expert {name!r}")
        return sub.set_index(["asset_id", "month"])["forecast"]


def ingest_forecasts(path) -> ForecastPanel:
    """Read a ``expert,asset_id,date,forecast`` CSV."""
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    if list(raw.columns) != FORECAST_COLUMNS:
        raise DataError(f"{path}: header must be {','.join(FORECAST_COLUMNS)}")
    months = np.empty(len(raw), dtype=np.int64)
    values = np.empty(len(raw))
    for i, (d, f) in enumerate(zip(raw["date"].tolist(), raw["forecast"].tolist())):
        try:
            months[i] = parse_month(d)
            values[i] = float(f)
        except (DataError, ValueError):
            raise DataError(f"{path}: line {i + 2}: cannot parse date {d!r} / forecast {f!r}") from None
        if not np.isfinite(values[i]):
            raise DataError(f"{path}: line {i + 2}: non-finite forecast")
    frame = pd.DataFrame(
        {"expert": raw["expert"], "asset_id": raw["asset_id"], "month": months, "forecast": values}
    )
    return ForecastPanel(frame)


def export_forecasts(panel: ForecastPanel, path) -> None:
    out = panel.frame.copy()
    out["date"] = [format_month(int(m)) for m in out["month"]]
    out[FORECAST_COLUMNS].to_csv(path, index=False)


@dataclass(frozen=True)
class LinearHuberModel:
    coef: np.ndarray
    intercept: float
    features: tuple = ()

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.shape[1] != self.coef.shape[0]:
            raise ShapeError(f"expected {self.coef.shape[0]} features, got {X2.shape[1]}")
        out = X2 @ self.coef + self.intercept
        return float(out[0]) if single else out


def huber_objective(theta, X, y, xi, l1=0.0) -> float:
    """Mean Huber loss of ``X @ theta[:-1] + theta[-1]`` plus an L1 penalty."""
    theta = np.asarray(theta, dtype=float)
    pred = X @ theta[:-1] + theta[-1]
    return float(np.mean(huber_loss(y, pred, xi))) + l1 * float(np.abs(theta[:-1]).sum())


def huber_objective_gradient(theta, X, y, xi, l1=0.0) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    residual = y - (X @ theta[:-1] + theta[-1])
    g = np.asarray(huber_gradient(residual, xi))
    n = X.shape[0]
    grad = np.empty_like(theta)
    grad[:-1] = -(X.T @ g) / n + l1 * np.sign(theta[:-1])
    grad[-1] = -g.sum() / n
    return grad


def subsample_rows(spec: LinearHuberExpert, n_rows: int, window: int = 0) -> np.ndarray:
    """Sorted training-row indices used by ``spec`` in refit ``window``."""
    if not 0 < spec.subsample <= 1:
        raise ParameterError(f"subsample fraction must lie in (0, 1], got {spec.subsample!r}")
    if spec.subsample == 1.0:
        return np.arange(n_rows)
    size = max(1, int(round(spec.subsample * n_rows)))
    rng = rng_for(spec.seed, "subsample", window)
    return np.sort(rng.choice(n_rows, size=size, replace=False))


def train_linear_huber(X, y, spec: LinearHuberExpert, window: int = 0, features=()) -> LinearHuberModel:
    """Fit the linear Huber expert on one refit window's training rows."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("training set is empty")
    if y.shape != (X.shape[0],):
        raise ShapeError("targets do not match the feature rows")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("training data must be finite")
    rows = subsample_rows(spec, X.shape[0], window)
    Xs, ys = X[rows], y[rows]
    theta = np.zeros(X.shape[1] + 1)
    for _ in range(spec.epochs):
        theta -= spec.learning_rate * huber_objective_gradient(theta, Xs, ys, spec.xi, spec.l1)
    return LinearHuberModel(theta[:-1].copy(), float(theta[-1]), tuple(features))


def predict(model: LinearHuberModel, features) -> np.ndarray:
    return model.predict(features)


def bag_experts(base: LinearHuberExpert, n_bags: int = 10, fraction: float = 0.8, master_seed: int = 0):
    """Clone ``base`` into ``n_bags`` replicas fit on random row subsets.

    Replicas are named ``<base>_0`` to ``<base>_{n_bags-1}``.
    """
    if not isinstance(base, LinearHuberExpert):
        raise ParameterError(f"expert {base.name!r} is not trainable and cannot be bagged")
    if not 0 < fraction <= 1:
        raise ParameterError(f"bagging fraction must lie in (0, 1], got {fraction!r}")
    if n_bags < 1:
        raise ParameterError("need at least one bagged replica")
    seeds = rng_for(master_seed, "bagging", base.name).integers(0, 2**31 - 1, size=n_bags)
    return [
        replace(base, name=f"{base.name}_{i}", subsample=fraction, seed=int(s))
        for i, s in enumerate(seeds)
    ]


def synth_noisy_oracle(returns: pd.DataFrame, spec: NoisyOracleExpert) -> ForecastPanel:
    """Forecast = realised return + N(0, sigma(month)) noise.

    ``returns`` needs columns ``asset_id``, ``month`` and ``ret``; noise is
    drawn in (month, asset_id) order so the output depends only on the seed
    and the data.
    """
    frame = returns[["asset_id", "month", "ret"]].sort_values(["month", "asset_id"], kind="mergesort")
    sigma = spec.sigma_at(frame["month"].to_numpy())
    if np.any(sigma < 0):
        raise ParameterError("noise schedule must be nonnegative")
    rng = rng_for(spec.seed, "noisy_oracle", spec.name)
    noise = rng.standard_normal(len(frame)) * sigma
    return ForecastPanel(
        pd.DataFrame(
            {
                "expert": spec.name,
                "asset_id": frame["asset_id"].to_numpy(),
                "month": frame["month"].to_numpy(),
                "forecast": frame["ret"].to_numpy() + noise,
            }
        )
    )


def synth_constant(returns: pd.DataFrame, spec: ConstantExpert) -> ForecastPanel:
    frame = returns[["asset_id", "month"]].sort_values(["month", "asset_id"], kind="mergesort")
    return ForecastPanel(frame.assign(expert=spec.name, forecast=float(spec.value)))


def coefficients_frame(models: dict) -> pd.DataFrame:
    """Rows ``expert, feature, coefficient``; the intercept is ``(intercept)``."""
    rows = []
    for name, model in models.items():
        feats = list(model.features) or [f"x{j}" for j in range(model.coef.shape[0])]
        rows.extend({"expert": name, "feature": f, "coefficient": c} for f, c in zip(feats, model.coef))
        rows.append({"expert": name, "feature": "(intercept)", "coefficient": model.intercept})
    return pd.DataFrame(rows, columns=["expert", "feature", "coefficient"])
