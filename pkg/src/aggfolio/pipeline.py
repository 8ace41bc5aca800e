"""End-to-end runs behind the command line: backtest, importance, verify, synth.

Each command writes its files into a staging directory next to the output
directory and moves them into place only once everything succeeded, so a
failed run leaves no partial report behind.
"""

from __future__ import annotations

import hashlib
import json
import os
import platform
import shutil
import tempfile
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .aggregation import Rule, run_online, weights_frame
from .config import ExperimentConfig, PanelData, derive_seed
from .data import RawPanel, build_schedule, format_month, generate_panel, load_panel, month_index
from .data import export_panel, preprocess
from .errors import CapacityError, ConfigError, DataError, InvariantViolation, ParameterError
from .experts import (
    ConstantExpert,
    ExternalExpert,
    ForecastPanel,
    LinearHuberExpert,
    NoisyOracleExpert,
    coefficients_frame,
    export_forecasts,
    ingest_forecasts,
    synth_constant,
    synth_noisy_oracle,
    train_linear_huber,
)
from .loss import LossKind
from .metrics import (
    IMPORTANCE_INDICATORS,
    DegenerateImportanceError,
    normalize_importance,
    rank_distribution,
    stats_frame,
    summarize,
    yearly_sharpe,
)
from .oracle import best_fixed_mixture, default_step, regret
from .portfolio import (
    CrossSection,
    ExpertLegs,
    StrategySeries,
    build_expert_legs,
    filter_universe,
    holdings_frame,
    long_short_aggregate,
    mixture_holdings,
    series_frame,
    strategy_turnover,
)

TARGET, PTF_UNI, PTF_BOA = "Target", "PtfUNI", "PtfBOA"
SIMPLEX_TOL = 1e-12
# Deltas this small relative to the full-mixture indicator are rounding noise.
NEAR_ZERO_RELATIVE = 1e-10


def parallel_map(fn, items, threads: int = 1) -> list:
    """``[fn(x) for x in items]``, optionally on a thread pool; order is kept."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------------------------------------------------- data + experts


def load_raw_panel(cfg: ExperimentConfig) -> RawPanel:
    if isinstance(cfg.data, PanelData):
        return load_panel(cfg.data.panel, cfg.data.schema)
    d = cfg.data
    return generate_panel(d.n_assets, d.n_months, d.n_features, cfg.seed, d.start, d.missing_rate)


@dataclass
class Experiment:
    """Everything downstream of forecasting: expert legs over the run months.

    The first ``pretrain`` months only warm the aggregation state; the rest
    are test months.
    """

    legs: ExpertLegs
    cross_sections: list
    pretrain: int
    coefficients: pd.DataFrame
    n_windows: int
    panel_counts: dict

    @property
    def test_legs(self) -> ExpertLegs:
        return self.legs.window(self.pretrain)

    @property
    def test_sections(self) -> list:
        return self.cross_sections[self.pretrain :]

    @property
    def test_dates(self) -> list[str]:
        return [format_month(m) for m in self.legs.months[self.pretrain :]]


def _run_months(cfg: ExperimentConfig, schedule, panel_months) -> list[int]:
    first_test = month_index(schedule[0].test_year, 1)
    last_test = month_index(schedule[len(schedule) - 1].test_year, 12)
    lo, hi = min(panel_months), max(panel_months)
    start = first_test - cfg.pretrain_months
    if month_index(cfg.schedule.start_year, 1) < lo or last_test > hi or start < lo:
        raise ConfigError(
            f"schedule needs data from {format_month(min(start, month_index(cfg.schedule.start_year, 1)))} "
            f"to {format_month(last_test)}, panel covers {format_month(lo)} to {format_month(hi)}"
        )
    if any(isinstance(e, LinearHuberExpert) for e in cfg.all_experts()):
        if cfg.pretrain_months > 12 * cfg.schedule.validation_years:
            raise ConfigError("pretrain_months must fit inside the first validation span")
    return list(range(start, last_test + 1))


def _fit_jobs(cfg, schedule, frame, features, threads):
    """Fit every trainable expert on every window's training span."""
    trainable = [e for e in cfg.all_experts() if isinstance(e, LinearHuberExpert)]
    if not trainable:
        return {}, pd.DataFrame(columns=["expert", "feature", "coefficient", "test_year"])
    month = frame["month"].to_numpy()
    usable = np.isfinite(frame["ret"].to_numpy())
    X_all = frame[features].to_numpy(dtype=float)
    y_all = frame["ret"].to_numpy(dtype=float)

    def fit(job):
        w, spec = job
        win = schedule[w]
        rows = usable & (month >= win.train_months.start) & (month < win.train_months.stop)
        if not rows.any():
            raise DataError(f"no training rows for test year {win.test_year}")
        return train_linear_huber(X_all[rows], y_all[rows], spec, window=w, features=features)

    jobs = [(w, spec) for w in range(len(schedule)) for spec in trainable]
    fitted = dict(zip(jobs, parallel_map(fit, jobs, threads)))
    coef = []
    for w in range(len(schedule)):
        part = coefficients_frame({spec.name: fitted[(w, spec)] for spec in trainable})
        part["test_year"] = schedule[w].test_year
        coef.append(part)
    models = {(w, spec.name): m for (w, spec), m in fitted.items()}
    return models, pd.concat(coef, ignore_index=True)


def _aligned(panel: ForecastPanel, name: str, frame: pd.DataFrame) -> np.ndarray:
    key = pd.MultiIndex.from_arrays([frame["asset_id"].to_numpy(), frame["month"].to_numpy()])
    return panel.for_expert(name).reindex(key).to_numpy(dtype=float)


def synthetic_forecasts(returns: pd.DataFrame, specs) -> ForecastPanel | None:
    """Forecasts of the noisy-oracle and constant experts among ``specs``.

    Generated over every row of ``returns``, so ``synth`` files and
    in-process runs on the same raw panel agree row for row.
    """
    frames = []
    for spec in specs:
        if isinstance(spec, NoisyOracleExpert):
            frames.append(synth_noisy_oracle(returns, spec).frame)
        elif isinstance(spec, ConstantExpert):
            frames.append(synth_constant(returns, spec).frame)
    return ForecastPanel(pd.concat(frames, ignore_index=True)) if frames else None


def expert_forecasts(
    cfg: ExperimentConfig, frame: pd.DataFrame, features, schedule, months, threads=1, raw_returns=None
):
    """Forecast arrays aligned with the rows of ``frame`` that fall in ``months``.

    Synthetic experts are generated from ``raw_returns`` (default: ``frame``).
    Returns ``(rows, {expert: forecasts}, coefficients)``.
    """
    rows = frame[frame["month"].isin(months)].reset_index(drop=True)
    models, coefficients = _fit_jobs(cfg, schedule, frame, features, threads)
    synthetic = synthetic_forecasts(frame if raw_returns is None else raw_returns, cfg.all_experts())
    external: dict[str, ForecastPanel] = {}
    out = {}
    row_month = rows["month"].to_numpy()
    # Window w serves its test year; the first window also serves pretraining.
    window_of = np.full(row_month.shape, -1)
    for w, win in enumerate(schedule):
        lo = win.test_months.start if w else months[0]
        window_of[(row_month >= lo) & (row_month < win.test_months.stop)] = w
    X = rows[features].to_numpy(dtype=float)
    for spec in cfg.all_experts():
        if isinstance(spec, LinearHuberExpert):
            f = np.full(len(rows), np.nan)
            for w in range(len(schedule)):
                sel = window_of == w
                if sel.any():
                    f[sel] = models[(w, spec.name)].predict(X[sel])
        elif isinstance(spec, (NoisyOracleExpert, ConstantExpert)):
            f = _aligned(synthetic, spec.name, rows)
        elif isinstance(spec, ExternalExpert):
            if spec.path not in external:
                external[spec.path] = ingest_forecasts(spec.path)
            f = _aligned(external[spec.path], spec.name, rows)
        else:  # pragma: no cover - config parsing only builds the kinds above
            raise ConfigError(f"unsupported expert {spec!r}")
        out[spec.name] = f
    return rows, out, coefficients


def cross_sections(rows: pd.DataFrame, forecasts: dict, cfg: ExperimentConfig) -> list[CrossSection]:
    """Tradable cross-sections: assets with a realised return, after the universe filter."""
    out = []
    ret = rows["ret"].to_numpy(dtype=float)
    caps = rows["mktcap"].to_numpy(dtype=float)
    ids = rows["asset_id"].to_numpy().astype(str)
    month = rows["month"].to_numpy()
    needs_caps = cfg.universe is not None or cfg.weighting == "value"
    bounds = np.flatnonzero(np.diff(month)) + 1
    for idx in np.split(np.arange(len(rows)), bounds):
        idx = idx[np.isfinite(ret[idx])]
        if idx.size == 0:
            continue
        m = int(month[idx[0]])
        if needs_caps and not np.all(caps[idx] > 0):
            bad = ids[idx][~(caps[idx] > 0)][0]
            raise DataError(f"asset {bad} has no positive market cap at {format_month(m)}")
        fc = {}
        for name, f in forecasts.items():
            vals = f[idx]
            if not np.all(np.isfinite(vals)):
                bad = ids[idx][~np.isfinite(vals)][0]
                raise DataError(f"expert {name!r} has no forecast for asset {bad} at {format_month(m)}")
            fc[name] = vals
        cs = CrossSection(m, ids[idx], ret[idx], caps[idx], fc)
        if cfg.universe is not None:
            cs = filter_universe(cs, cfg.universe)
        out.append(cs)
    return out


def prepare_experiment(cfg: ExperimentConfig, threads: int = 1) -> Experiment:
    raw = load_raw_panel(cfg)
    processed = preprocess(raw)
    s = cfg.schedule
    try:
        schedule = build_schedule(s.start_year, s.train_years, s.validation_years, s.final_test_year)
    except ParameterError as exc:
        raise ConfigError(f"schedule: {exc}") from None
    months = _run_months(cfg, schedule, raw.months)
    rows, forecasts, coefficients = expert_forecasts(
        cfg, processed.frame, processed.features, schedule, months, threads,
        raw_returns=raw.frame[["asset_id", "month", "ret"]],
    )
    sections = cross_sections(rows, forecasts, cfg)
    if [cs.month for cs in sections] != months:
        missing = sorted(set(months) - {cs.month for cs in sections})
        raise DataError(f"no tradable assets in month(s) {[format_month(m) for m in missing[:5]]}")
    names = cfg.expert_names
    chunks = np.array_split(np.arange(len(sections)), max(1, min(threads, len(sections))))
    parts = parallel_map(
        lambda c: build_expert_legs([sections[i] for i in c], names, cfg.weighting), chunks, threads
    )
    legs = _concat_legs(parts)
    return Experiment(legs, sections, cfg.pretrain_months, coefficients, len(schedule), raw.counts())


def _concat_legs(parts: list[ExpertLegs]) -> ExpertLegs:
    parts = [p for p in parts if p.months]
    first = parts[0]
    k = len(first.names)
    return ExpertLegs(
        first.names,
        [m for p in parts for m in p.months],
        np.concatenate([p.long for p in parts], axis=1),
        np.concatenate([p.short for p in parts], axis=1),
        np.concatenate([p.target_long for p in parts]),
        np.concatenate([p.target_short for p in parts]),
        [[h for p in parts for h in p.long_holdings[j]] for j in range(k)],
        [[h for p in parts for h in p.short_holdings[j]] for j in range(k)],
    )


def aggregate(exp: Experiment, rule: Rule, cfg: ExperimentConfig, legs: ExpertLegs | None = None):
    legs = legs or exp.legs
    res = long_short_aggregate(
        legs.long, legs.short, legs.target_long, legs.target_short,
        rule, cfg.loss, exp.pretrain, cfg.linearize,
    )
    for side, traj in (("long", res.long), ("short", res.short)):
        if not (_simplex_ok(traj.weights) and _simplex_ok(traj.weights_after)):
            raise InvariantViolation(f"{rule.label} {side} weights left the simplex")
    return res


def mixture_label(rule: Rule) -> str:
    return PTF_UNI if rule.kind == "uni" else PTF_BOA


# ---------------------------------------------------------------- output staging


@contextmanager
def staged_output(out_dir):
    """Yield a staging directory whose files replace those in ``out_dir`` on success."""
    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{out_dir.name}.staging-", dir=out_dir.parent))
    try:
        yield stage
        out_dir.mkdir(parents=True, exist_ok=True)
        for src in sorted(stage.rglob("*")):
            if src.is_file():
                dst = out_dir / src.relative_to(stage)
                dst.parent.mkdir(parents=True, exist_ok=True)
                os.replace(src, dst)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    frame.to_csv(path, index=False, lineterminator="\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(stage: Path, command: str, cfg: ExperimentConfig | None, extra=None) -> None:
    import matplotlib
    import scipy

    files = {
        str(p.relative_to(stage)): _sha256(p) for p in sorted(stage.rglob("*")) if p.is_file()
    }
    manifest = {
        "tool": "aggfolio",
        "command": command,
        "versions": {
            "aggfolio": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "pandas": pd.__version__,
            "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__,
        },
        "files": files,
    }
    if cfg is not None:
        manifest["config_sha256"] = cfg.sha256
        manifest["seeds"] = cfg.seeds()
        manifest["config"] = cfg.document
    if extra:
        manifest.update(extra)
    (stage / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- backtest


@dataclass
class BacktestReport:
    out_dir: Path
    stats: pd.DataFrame
    series: dict = field(default_factory=dict)
    files: list = field(default_factory=list)


def _strategy_table(exp: Experiment, cfg: ExperimentConfig):
    """Test-month returns and holdings of experts, target and mixtures."""
    test = exp.test_legs
    months = test.months
    series: dict[str, np.ndarray] = {}
    holdings: dict[str, tuple] = {}
    for k, name in enumerate(test.names):
        series[name] = test.long[k] - test.short[k]
        holdings[name] = (test.long_holdings[k], test.short_holdings[k])
    series[TARGET] = test.target_long - test.target_short
    rules = [Rule.uni()] if cfg.rule.kind == "uni" else [Rule.uni(), cfg.rule]
    results = {}
    for rule in rules:
        label = mixture_label(rule)
        res = aggregate(exp, rule, cfg)
        results[label] = res
        series[label] = res.ls_series
        holdings[label] = mixture_holdings(exp.legs, res, exp.pretrain)
    return months, series, holdings, results


def _stats(series, holdings, exp: Experiment, cfg: ExperimentConfig) -> dict:
    out = {}
    for name, r in series.items():
        turnover = None
        if name in holdings:
            lh, sh = holdings[name]
            s = StrategySeries(name, exp.test_legs.months, r, lh, sh)
            turnover = strategy_turnover(s, exp.test_sections)
        out[name] = summarize(r, monthly_turnovers=turnover, drawdown=cfg.drawdown, strict=False)
    return out


def _rank_table(series, months):
    try:
        per_year = {name: yearly_sharpe(r, months) for name, r in series.items()}
    except ArithmeticError:
        return None
    table = pd.DataFrame(per_year).T
    if table.shape[1] < 1 or table.isna().any().any():
        return None
    return rank_distribution(table)


def _summary_text(title, cfg, exp, stats_table, notes=()) -> str:
    lines = [
        title,
        f"config sha256: {cfg.sha256}",
        f"panel: {exp.panel_counts['rows']} rows, {exp.panel_counts['assets']} assets, "
        f"{exp.panel_counts['months']} months",
        f"refit windows: {exp.n_windows}, pretrain months: {exp.pretrain}, "
        f"test months: {len(exp.test_dates)} ({exp.test_dates[0]} to {exp.test_dates[-1]})",
        f"experts: {', '.join(exp.legs.names)}",
        f"rule: {cfg.rule.kind}" + (f" (eta={cfg.rule.eta})" if cfg.rule.eta else "")
        + f", loss: {cfg.loss.kind}, weighting: {cfg.weighting}",
        "",
        stats_table.to_string(index=False, float_format=lambda v: f"{v: .4f}"),
    ]
    lines.extend(notes)
    return "\n".join(lines) + "\n"


def run_backtest(cfg: ExperimentConfig, out_dir=None, threads: int = 1, figures: bool = False):
    out_dir = cfg.resolve_output_dir(out_dir)
    exp = prepare_experiment(cfg, threads)
    months, series, holdings, results = _strategy_table(exp, cfg)
    dates = exp.test_dates
    stats = stats_frame(_stats(series, holdings, exp, cfg))
    ranks = _rank_table(series, months)
    main = results[mixture_label(cfg.rule)]

    with staged_output(out_dir) as stage:
        _write_csv(series_frame(dates, series), stage / "strategies.csv")
        _write_csv(weights_frame(dates, exp.legs.names, main.long.weights), stage / "weights_long.csv")
        _write_csv(weights_frame(dates, exp.legs.names, main.short.weights), stage / "weights_short.csv")
        _write_csv(
            pd.concat([holdings_frame(dates, n, *h) for n, h in holdings.items()], ignore_index=True),
            stage / "holdings.csv",
        )
        _write_csv(stats, stage / "stats.csv")
        _write_csv(exp.coefficients, stage / "coefficients.csv")
        notes = []
        if ranks is not None:
            _write_csv(ranks.rename_axis("strategy").reset_index(), stage / "ranks.csv")
        else:
            notes.append("annual Sharpe ranks skipped: some strategy has zero volatility in a test year")
        (stage / "summary.txt").write_text(_summary_text("aggfolio backtest", cfg, exp, stats, notes))
        if figures:
            from . import plotting

            plotting.cumulative_returns(stage / "figures" / "cumulative.png", months, series)
            label = mixture_label(cfg.rule)
            plotting.weight_paths(
                stage / "figures" / f"weights_{label}.png", months, exp.legs.names,
                main.long.weights, main.short.weights, title=label,
            )
            if ranks is not None:
                plotting.rank_heatmap(stage / "figures" / "ranks.png", ranks)
        write_manifest(stage, "backtest", cfg)
        files = sorted(str(p.relative_to(stage)) for p in stage.rglob("*") if p.is_file())
    return BacktestReport(out_dir, stats, series, files)


# ---------------------------------------------------------------- importance


INDICATOR_FIELDS = {"ann_ret": "ann_ret", "ann_vol": "ann_vol", "sharpe": "sharpe", "cum_log_ret": "cum_log_ret"}


def importance_table(full_stats, loo_stats: dict) -> pd.DataFrame:
    """Normalised leave-one-out importance for all four indicators.

    Deltas within rounding of zero are flagged ``near_zero``. When every
    delta of an indicator is near zero the experts are interchangeable for
    that indicator and importance is split evenly in magnitude.
    """
    rows = []
    for ind in IMPORTANCE_INDICATORS:
        full = getattr(full_stats, INDICATOR_FIELDS[ind])
        without = {k: getattr(s, INDICATOR_FIELDS[ind]) for k, s in loo_stats.items()}
        raw = {k: full - v for k, v in without.items()}
        scale = NEAR_ZERO_RELATIVE * max(1.0, abs(full)) if np.isfinite(full) else np.inf
        near = {k: not abs(v) > scale for k, v in raw.items()}
        if all(near.values()):
            norm = {k: 1.0 / len(raw) for k in raw}
        else:
            try:
                norm = normalize_importance({k: (0.0 if near[k] else v) for k, v in raw.items()})
            except DegenerateImportanceError:
                norm = {k: float("nan") for k in raw}
        for k in raw:
            rows.append(
                {
                    "expert": k,
                    "indicator": ind,
                    "full": full,
                    "without": without[k],
                    "raw_delta": raw[k],
                    "importance": norm[k],
                    "near_zero": near[k],
                }
            )
    return pd.DataFrame(rows)


def run_importance(cfg: ExperimentConfig, out_dir=None, threads: int = 1, figures: bool = False):
    out_dir = cfg.resolve_output_dir(out_dir)
    exp = prepare_experiment(cfg, threads)
    names = exp.legs.names
    if len(names) < 2:
        raise ConfigError("importance needs at least two experts")

    def ls_stats(k):
        legs = exp.legs if k is None else exp.legs.drop(k)
        res = aggregate(exp, cfg.rule, cfg, legs)
        return summarize(res.ls_series, drawdown=cfg.drawdown, strict=False)

    runs = parallel_map(ls_stats, [None, *range(len(names))], threads)
    full, loo = runs[0], dict(zip(names, runs[1:]))
    table = importance_table(full, loo)
    with staged_output(out_dir) as stage:
        _write_csv(table, stage / "importance.csv")
        flagged = sorted(set(table.loc[table["near_zero"], "expert"]))
        notes = [f"near-zero deltas: {', '.join(flagged)}"] if flagged else []
        wide = table.pivot(index="expert", columns="indicator", values="importance").loc[names]
        text = [
            "aggfolio importance",
            f"config sha256: {cfg.sha256}",
            f"rule: {cfg.rule.kind}, experts: {', '.join(names)}",
            "",
            wide[list(IMPORTANCE_INDICATORS)].to_string(float_format=lambda v: f"{v: .4f}"),
            *notes,
        ]
        (stage / "summary.txt").write_text("\n".join(text) + "\n")
        if figures:
            from . import plotting

            plotting.importance_bars(stage / "figures" / "importance.png", table)
        write_manifest(stage, "importance", cfg)
    return table


# ---------------------------------------------------------------- verify


@dataclass
class Check:
    scenario: str
    name: str
    value: float
    bound: float
    passed: bool
    asserted: bool = True


def _regret_at(traj, streams, target, loss, step, horizon):
    mix = float(np.mean(traj.mixture_losses[:horizon]))
    orc = best_fixed_mixture(streams[:, :horizon], target[:horizon], loss, step)
    return regret(mix, orc.average_loss), orc


def _simplex_ok(weights) -> bool:
    w = np.asarray(weights)
    return bool(np.all(w >= 0) and np.all(np.abs(w.sum(axis=1) - 1.0) <= SIMPLEX_TOL))


def scenario_constant_experts(n_steps=2000):
    streams = np.vstack([np.zeros(n_steps), np.ones(n_steps)])
    return streams, np.full(n_steps, 0.3)


def scenario_regime_switch(n_steps=400, seed=0, low=0.01, high=0.1, scale=0.05):
    """Two noisy copies of the target whose noise levels swap halfway."""
    rng = np.random.default_rng(seed)
    target = rng.normal(0.0, scale, n_steps)
    half = n_steps // 2
    sig_a = np.where(np.arange(n_steps) < half, low, high)
    sig_b = np.where(np.arange(n_steps) < half, high, low)
    noise = rng.standard_normal((2, n_steps))
    streams = np.vstack([target + sig_a * noise[0], target + sig_b * noise[1]])
    return streams, target, half


def builtin_checks(master_seed: int = 0) -> list[Check]:
    sq = LossKind.squared()
    checks = []

    streams, target = scenario_constant_experts()
    n = target.shape[0]
    traj = run_online(Rule.boa(), streams, target, sq)
    r_full, orc = _regret_at(traj, streams, target, sq, 0.01, n)
    r_half, _ = _regret_at(traj, streams, target, sq, 0.01, n // 2)
    checks.append(Check("constant_experts", "R_T < R_T/2", r_full, r_half, r_full < r_half))
    bound = 3 * np.log(2) / n + 0.01**2
    checks.append(Check("constant_experts", "R_T within oracle bound", r_full, bound, r_full <= bound))
    checks.append(Check("constant_experts", "simplex", 0.0, SIMPLEX_TOL, _simplex_ok(traj.weights_after)))

    streams, target, half = scenario_regime_switch(seed=derive_seed(master_seed, "verify", "regime"))
    boa = run_online(Rule.boa(), streams, target, sq)
    uni = run_online(Rule.uni(), streams, target, sq)
    checks.append(
        Check("regime_switch", "BOA loss < UNI loss", boa.average_loss, uni.average_loss,
              boa.average_loss < uni.average_loss)
    )
    after = np.flatnonzero(boa.weights_after[half:, 1] > 0.5)
    lag = float(after[0] + 1) if after.size else float("inf")
    checks.append(Check("regime_switch", "steps to cross 0.5 after switch", lag, 60.0, lag <= 60))

    rng = np.random.default_rng(derive_seed(master_seed, "verify", "identical"))
    x = rng.normal(0.0, 0.05, 500)
    y = rng.normal(0.0, 0.05, 500)
    same = np.vstack([x, x, x])
    for rule in (Rule.uni(), Rule.boa()):
        traj = run_online(rule, same, y, sq)
        r, _ = _regret_at(traj, same, y, sq, 0.1, 500)
        checks.append(Check("identical_experts", f"|R_T| ({rule.kind})", abs(r), 1e-12, abs(r) <= 1e-12))
    return checks


def config_checks(cfg: ExperimentConfig, threads: int = 1) -> list[Check]:
    exp = prepare_experiment(cfg, threads)
    k = len(exp.legs.names)
    try:
        step = cfg.oracle_step if cfg.oracle_step is not None else default_step(k)
    except CapacityError as exc:
        raise CapacityError(f"{exc}; verify a config with fewer experts or set oracle_step") from None
    res = aggregate(exp, cfg.rule, cfg)
    test = exp.test_legs
    out = []
    for side, traj, streams, target in (
        ("long", res.long, test.long, test.target_long),
        ("short", res.short, test.short, test.target_short),
    ):
        n = len(traj)
        scen = f"config_{side}"
        r_full, _ = _regret_at(traj, streams, target, cfg.loss, step, n)
        r_half, _ = _regret_at(traj, streams, target, cfg.loss, step, max(1, n // 2))
        out.append(Check(scen, "R_T", r_full, float("nan"), True, asserted=False))
        out.append(Check(scen, "R_T/2", r_half, float("nan"), True, asserted=False))
        out.append(Check(scen, "R_T < R_T/2", r_full, r_half, r_full < r_half, asserted=False))
        out.append(Check(scen, "simplex", 0.0, SIMPLEX_TOL, _simplex_ok(traj.weights_after)))
    return out


def run_verify(cfg: ExperimentConfig, out_dir=None, threads: int = 1):
    """Run the regret checks; returns ``(table, ok)`` and keeps the report either way."""
    out_dir = cfg.resolve_output_dir(out_dir)
    checks = builtin_checks(cfg.seed) + config_checks(cfg, threads)
    table = pd.DataFrame([c.__dict__ for c in checks])
    ok = bool(table.loc[table["asserted"], "passed"].all())
    with staged_output(out_dir) as stage:
        _write_csv(table, stage / "verify.csv")
        lines = ["aggfolio verify", f"config sha256: {cfg.sha256}", ""]
        for c in checks:
            status = "PASS" if c.passed else "FAIL"
            if not c.asserted:
                status = "info"
            lines.append(f"[{status}] {c.scenario}: {c.name} = {c.value:.6g} (bound {c.bound:.6g})")
        lines.append("")
        lines.append("all asserted checks passed" if ok else "INVARIANT VIOLATION")
        (stage / "summary.txt").write_text("\n".join(lines) + "\n")
        write_manifest(stage, "verify", cfg, {"ok": ok})
    return table, ok


# ---------------------------------------------------------------- synth


def run_synth(cfg: ExperimentConfig, out_dir=None) -> list[str]:
    """Write a synthetic panel, its schema and the synthetic experts' forecasts."""
    if isinstance(cfg.data, PanelData):
        raise ConfigError("synth needs a 'synthetic' data block")
    out_dir = cfg.resolve_output_dir(out_dir)
    panel = load_raw_panel(cfg)
    synthetic = synthetic_forecasts(panel.frame[["asset_id", "month", "ret"]], cfg.all_experts())
    with staged_output(out_dir) as stage:
        export_panel(panel, stage / "panel.csv", stage / "schema.json")
        if synthetic is not None:
            export_forecasts(synthetic, stage / "forecasts.csv")
        write_manifest(stage, "synth", cfg, {"counts": panel.counts()})
        files = sorted(str(p.relative_to(stage)) for p in stage.rglob("*") if p.is_file())
    return files
