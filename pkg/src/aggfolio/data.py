"""Panel loading and preprocessing.

Months are integers ``year * 12 + (month - 1)`` throughout; CSV files carry
them as ``YYYY-MM``. Preprocessing runs in a fixed order: publication lags,
then a per-month cross-sectional rank transform into [-1, 1], then median
imputation of whatever is still missing.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import rankdata

from .errors import DataError, ParameterError
from .seeds import rng_for

# Months between observing a value and being allowed to use it.
LAGS = {"monthly": 1, "quarterly": 4, "annual": 6, "none": 0}
BASE_COLUMNS = ["asset_id", "date", "ret", "mktcap"]

_DATE_RE = re.compile(r"^(\d{4})-(\d{2})$")


def month_index(year: int, month: int) -> int:
    return year * 12 + (month - 1)


def parse_month(text: str) -> int:
    m = _DATE_RE.match(str(text).strip())
    if not m or not 1 <= int(m.group(2)) <= 12:
        raise DataError(f"bad month {text!r}, expected YYYY-MM")
    return month_index(int(m.group(1)), int(m.group(2)))


def format_month(index: int) -> str:
    return f"{index // 12:04d}-{index % 12 + 1:02d}"


def year_of(index) -> int:
    return index // 12


@dataclass
class RawPanel:
    """Asset-month rows with realised return, market cap and features.

    ``frame`` has columns ``asset_id`` (str), ``month`` (int), ``ret``,
    ``mktcap`` and one column per feature, sorted by (month, asset_id).
    ``frequencies`` maps each feature to a key of ``LAGS``.
    """

    frame: pd.DataFrame
    frequencies: dict[str, str] = field(default_factory=dict)

    @property
    def features(self) -> list[str]:
        return list(self.frequencies)

    @property
    def months(self) -> list[int]:
        return sorted(self.frame["month"].unique().tolist())

    def counts(self) -> dict:
        return {
            "rows": int(len(self.frame)),
            "assets": int(self.frame["asset_id"].nunique()),
            "months": int(self.frame["month"].nunique()),
        }


def _check_frequencies(frequencies: dict) -> None:
    for name, tag in frequencies.items():
        if tag not in LAGS:
            raise DataError(f"feature {name!r} has unknown frequency tag {tag!r}")


def load_panel(csv_path, schema_path) -> RawPanel:
    """Read a panel CSV and its JSON schema sidecar ``{feature: frequency}``."""
    frequencies = json.loads(Path(schema_path).read_text())
    if not isinstance(frequencies, dict):
        raise DataError("schema must be a JSON object mapping feature to frequency")
    _check_frequencies(frequencies)
    raw = pd.read_csv(
        csv_path, dtype={"asset_id": str, "date": str}, float_precision="round_trip",
        keep_default_na=False, na_values=[""],
    )
    header = list(raw.columns)
    if header[:4] != BASE_COLUMNS:
        raise DataError(f"panel header must start with {','.join(BASE_COLUMNS)}, got {header[:4]}")
    features = header[4:]
    if set(features) != set(frequencies) or len(features) != len(frequencies):
        raise DataError(f"schema features {sorted(frequencies)} do not match CSV columns {features}")
    if raw.empty:
        raise DataError(f"{csv_path}: panel has no rows")
    for col in ["ret", "mktcap", *features]:
        if raw[col].dtype == object:
            bad = (pd.to_numeric(raw[col], errors="coerce").isna() & raw[col].notna()).to_numpy()
            if bad.any():
                raise DataError(f"line {int(np.argmax(bad)) + 2}: column {col!r} is not numeric")
            raw[col] = pd.to_numeric(raw[col])
    months = []
    for i, d in enumerate(raw["date"].tolist()):
        try:
            months.append(parse_month(d))
        except DataError as exc:
            raise DataError(f"line {i + 2}: {exc}") from None
    ret = raw["ret"].to_numpy(dtype=float)
    bad = np.isinf(ret)
    if bad.any():
        raise DataError(f"line {int(np.argmax(bad)) + 2}: non-finite return")
    frame = raw.drop(columns="date")
    frame.insert(1, "month", np.asarray(months, dtype=np.int64))
    dup = frame.duplicated(["asset_id", "month"])
    if dup.any():
        i = int(np.argmax(dup.to_numpy()))
        raise DataError(
            f"line {i + 2}: duplicate row for asset {frame['asset_id'].iat[i]!r} at {raw['date'].iat[i]}"
        )
    frame = frame.sort_values(["month", "asset_id"], kind="mergesort").reset_index(drop=True)
    return RawPanel(frame, {f: frequencies[f] for f in features})


def export_panel(panel: RawPanel, csv_path, schema_path) -> None:
    out = panel.frame.copy()
    out.insert(1, "date", [format_month(m) for m in out.pop("month")])
    out = out[BASE_COLUMNS + panel.features]
    out.to_csv(csv_path, index=False)
    Path(schema_path).write_text(json.dumps(panel.frequencies, indent=2) + "\n")


def rank_transform(values) -> np.ndarray:
    """Cross-sectional average ranks mapped affinely onto [-1, 1].

    The smallest rank goes to -1 and the largest to +1; a single distinct
    value maps to 0. Missing entries (NaN) stay missing.
    """
    x = np.asarray(values, dtype=float)
    ok = ~np.isnan(x)
    if not ok.any():
        raise DataError("cannot rank a column with no observed values")
    out = np.full(x.shape, np.nan)
    r = rankdata(x[ok], method="average")
    lo, hi = r.min(), r.max()
    out[ok] = 0.0 if hi == lo else 2.0 * (r - lo) / (hi - lo) - 1.0
    return out


def impute_median(values) -> np.ndarray:
    x = np.asarray(values, dtype=float)
    ok = ~np.isnan(x)
    if not ok.any():
        raise DataError("cannot impute a column with no observed values")
    out = x.copy()
    out[~ok] = np.median(x[ok])
    return out


def lag_features(panel: RawPanel) -> RawPanel:
    """Shift every feature forward by its publication lag.

    A value observed in month ``t`` becomes usable in ``t + lag``. Rows left
    with no usable feature are dropped. The result is tagged ``none`` so it
    is not lagged twice.
    """
    _check_frequencies(panel.frequencies)
    base = panel.frame[["asset_id", "month", "ret", "mktcap"]]
    out = base.copy()
    for lag in sorted(set(panel.frequencies.values()), key=LAGS.get):
        cols = [f for f, tag in panel.frequencies.items() if tag == lag]
        shifted = panel.frame[["asset_id", "month", *cols]].copy()
        shifted["month"] += LAGS[lag]
        out = out.merge(shifted, on=["asset_id", "month"], how="left")
    features = panel.features
    out = out[["asset_id", "month", "ret", "mktcap", *features]]
    if features:
        out = out[out[features].notna().any(axis=1)]
    out = out.sort_values(["month", "asset_id"], kind="mergesort").reset_index(drop=True)
    return RawPanel(out, {f: "none" for f in features})


def _per_month(frame, features, fn):
    frame = frame.copy()
    if features:
        grouped = frame.groupby("month", sort=True)[features]
        frame[features] = grouped.transform(lambda col: fn(col.to_numpy(dtype=float)))
    return frame


def preprocess(panel: RawPanel) -> RawPanel:
    """Lag, then rank-transform, then median-impute every feature by month."""
    lagged = lag_features(panel)
    features = lagged.features

    def _rank(x):
        return rank_transform(x) if (~np.isnan(x)).any() else x

    def _impute(x):
        # A feature unobserved in a whole month carries no information; it
        # sits at the centre of the ranked scale.
        return impute_median(x) if (~np.isnan(x)).any() else np.zeros_like(x)

    frame = _per_month(lagged.frame, features, _rank)
    frame = _per_month(frame, features, _impute)
    return RawPanel(frame, lagged.frequencies)


@dataclass(frozen=True)
class Window:
    train: tuple[int, int]
    validation: tuple[int, int]
    test_year: int

    @staticmethod
    def _months(span):
        return range(month_index(span[0], 1), month_index(span[1], 12) + 1)

    @property
    def train_months(self) -> range:
        return self._months(self.train)

    @property
    def validation_months(self) -> range:
        return self._months(self.validation)

    @property
    def test_months(self) -> range:
        return self._months((self.test_year, self.test_year))


@dataclass(frozen=True)
class RefitSchedule:
    windows: tuple[Window, ...]

    def __len__(self):
        return len(self.windows)

    def __iter__(self):
        return iter(self.windows)

    def __getitem__(self, i):
        return self.windows[i]


def build_schedule(start_year: int, train_years: int, validation_years: int, final_test_year: int):
    """Expanding-train, rolling-validation windows with one test year each."""
    if train_years < 1 or validation_years < 1:
        raise ParameterError("training and validation spans must be positive")
    first_test = start_year + train_years + validation_years
    if final_test_year < first_test:
        raise ParameterError(
            f"final test year {final_test_year} precedes the first feasible test year {first_test}"
        )
    windows = []
    for w in range(final_test_year - first_test + 1):
        train_end = start_year + train_years + w - 1
        val = (train_end + 1, train_end + validation_years)
        windows.append(Window((start_year, train_end), val, val[1] + 1))
    return RefitSchedule(tuple(windows))


def generate_panel(
    n_assets: int = 500,
    n_months: int = 240,
    n_features: int = 8,
    seed: int = 0,
    start: str = "1990-01",
    missing_rate: float = 0.02,
) -> RawPanel:
    """Synthetic panel with persistent characteristics that predict returns.

    Latent characteristics follow per-asset AR(1) paths. Returns load on a
    common market factor, on a linear signal in last month's
    characteristics, and on idiosyncratic noise; caps compound from a
    lognormal start. Feature frequency tags cycle monthly, quarterly, annual.
    """
    if min(n_assets, n_months, n_features) < 1:
        raise ParameterError("panel dimensions must be positive")
    rng = rng_for(seed, "panel")
    first = parse_month(start)
    rho = 0.95
    loadings = rng.normal(0.0, 1.0, n_features)
    loadings *= 0.004 / np.linalg.norm(loadings)
    beta = rng.normal(1.0, 0.3, n_assets)
    chars = rng.normal(0.0, 1.0, (n_assets, n_features))
    log_cap = rng.normal(6.0, 1.5, n_assets)
    market = rng.normal(0.006, 0.04, n_months)
    frames = []
    tags = ["monthly", "quarterly", "annual"]
    names = [f"c{j:02d}" for j in range(n_features)]
    ids = np.asarray([f"A{i:05d}" for i in range(n_assets)])
    for t in range(n_months):
        signal = chars @ loadings
        chars = rho * chars + np.sqrt(1 - rho**2) * rng.normal(0.0, 1.0, chars.shape)
        idio = 0.07 * rng.standard_t(5, n_assets) / np.sqrt(5 / 3)
        ret = np.maximum(0.004 + beta * market[t] + signal + idio, -0.95)
        cap = np.exp(log_cap)
        observed = np.where(rng.random(chars.shape) < missing_rate, np.nan, chars)
        frame = pd.DataFrame({"asset_id": ids, "month": first + t, "ret": ret, "mktcap": cap})
        for j, name in enumerate(names):
            frame[name] = observed[:, j]
        frames.append(frame)
        log_cap = log_cap + np.log1p(ret)
    frame = pd.concat(frames, ignore_index=True)
    return RawPanel(frame, {name: tags[j % 3] for j, name in enumerate(names)})
