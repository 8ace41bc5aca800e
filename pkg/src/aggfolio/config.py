"""Experiment configuration: a strict, versioned JSON document.

Unknown keys anywhere in the document are rejected. Relative paths are
resolved against the directory holding the config file.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .aggregation import Rule
from .data import parse_month
from .errors import ConfigError, DataError, ParameterError
from .experts import ConstantExpert, ExternalExpert, LinearHuberExpert, NoisyOracleExpert, bag_experts
from .loss import DEFAULT_HUBER_THRESHOLD, LossKind
from .portfolio import EQUAL, VALUE, BottomNByCap, TopNByCap
from .seeds import rng_for

SCHEMA_VERSION = 1
OUTPUT_DIR_ENV = "AGGFOLIO_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "aggfolio-out"

_MISSING = object()


class _Section:
    """Pops typed keys from one JSON object and rejects leftovers."""

    def __init__(self, doc, where: str):
        if not isinstance(doc, dict):
            raise ConfigError(f"{where}: expected an object")
        self.doc = dict(doc)
        self.where = where

    def get(self, key, kind, default=_MISSING):
        if key not in self.doc:
            if default is _MISSING:
                raise ConfigError(f"{self.where}: missing required key {key!r}")
            return default
        value = self.doc.pop(key)
        if value is None and default is None:
            return None
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or (kind in (int, float) and isinstance(value, bool)):
            raise ConfigError(f"{self.where}.{key}: expected {getattr(kind, '__name__', kind)}, got {value!r}")
        return value

    def done(self):
        if self.doc:
            raise ConfigError(f"{self.where}: unknown key(s) {sorted(self.doc)}")


@dataclass(frozen=True)
class SyntheticData:
    n_assets: int = 500
    n_months: int = 240
    n_features: int = 8
    start: str = "1990-01"
    missing_rate: float = 0.02


@dataclass(frozen=True)
class PanelData:
    panel: Path
    schema: Path


@dataclass(frozen=True)
class ScheduleConfig:
    start_year: int
    train_years: int
    validation_years: int
    final_test_year: int


@dataclass(frozen=True)
class BaggingConfig:
    experts: tuple[str, ...]
    n_bags: int = 10
    fraction: float = 0.8
    seed: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data: SyntheticData | PanelData
    experts: tuple
    schedule: ScheduleConfig
    weighting: str = EQUAL
    universe: Any = None
    rule: Rule = field(default_factory=Rule.boa)
    loss: LossKind = field(default_factory=LossKind.squared)
    pretrain_months: int = 0
    bagging: BaggingConfig | None = None
    output_dir: Path | None = None
    oracle_step: float | None = None
    drawdown: str = "log"
    linearize: bool = True
    document: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def sha256(self) -> str:
        return config_hash(self.document)

    @property
    def expert_names(self) -> list[str]:
        return [e.name for e in self.all_experts()]

    def all_experts(self) -> list:
        """Configured experts followed by any bagged replicas."""
        out = list(self.experts)
        if self.bagging is not None:
            by_name = {e.name: e for e in self.experts}
            for name in self.bagging.experts:
                seed = self.bagging.seed
                if seed is None:
                    seed = derive_seed(self.seed, "bagging")
                try:
                    out.extend(bag_experts(by_name[name], self.bagging.n_bags, self.bagging.fraction, seed))
                except ParameterError as exc:
                    raise ConfigError(f"bagging: {exc}") from None
        return out

    def resolve_output_dir(self, override=None) -> Path:
        if override is not None:
            return Path(override)
        if self.output_dir is not None:
            return self.output_dir
        return Path(os.environ.get(OUTPUT_DIR_ENV) or DEFAULT_OUTPUT_DIR)

    def seeds(self) -> dict:
        out = {"master": self.seed, "panel": self.seed}
        for e in self.all_experts():
            if hasattr(e, "seed"):
                out[f"expert:{e.name}"] = e.seed
        if self.bagging is not None:
            out["bagging"] = self.bagging.seed if self.bagging.seed is not None else derive_seed(self.seed, "bagging")
        return out


def config_hash(document: dict) -> str:
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def derive_seed(master_seed: int, *keys) -> int:
    """An integer seed for a named sub-stream of the master seed."""
    return int(rng_for(master_seed, "seed", *keys).integers(0, 2**31 - 1))


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    return p if p.is_absolute() else base / p


def _parse_data(doc, base: Path):
    sec = _Section(doc, "data")
    synthetic = sec.get("synthetic", dict, None)
    panel = sec.get("panel", str, None)
    schema = sec.get("schema", str, None)
    sec.done()
    if (synthetic is None) == (panel is None):
        raise ConfigError("data: give exactly one of 'synthetic' or 'panel'")
    if panel is not None:
        if schema is None:
            raise ConfigError("data: 'panel' needs a 'schema' sidecar path")
        return PanelData(_resolve(panel, base), _resolve(schema, base))
    if schema is not None:
        raise ConfigError("data: 'schema' only applies to a panel file")
    syn = _Section(synthetic, "data.synthetic")
    out = SyntheticData(
        n_assets=syn.get("n_assets", int, 500),
        n_months=syn.get("n_months", int, 240),
        n_features=syn.get("n_features", int, 8),
        start=syn.get("start", str, "1990-01"),
        missing_rate=syn.get("missing_rate", float, 0.02),
    )
    syn.done()
    if min(out.n_assets, out.n_months, out.n_features) < 1:
        raise ConfigError("data.synthetic: dimensions must be positive")
    if not 0 <= out.missing_rate < 1:
        raise ConfigError("data.synthetic.missing_rate must lie in [0, 1)")
    try:
        parse_month(out.start)
    except DataError as exc:
        raise ConfigError(f"data.synthetic.start: {exc}") from None
    return out


def _parse_expert(doc, i: int, master_seed: int, base: Path):
    sec = _Section(doc, f"experts[{i}]")
    name = sec.get("name", str)
    kind = sec.get("kind", str)
    where = f"experts[{i}] ({name})"
    if kind == "external":
        spec = ExternalExpert(name, str(_resolve(sec.get("path", str), base)))
    elif kind == "linear_huber":
        spec = LinearHuberExpert(
            name,
            xi=sec.get("xi", float, DEFAULT_HUBER_THRESHOLD),
            learning_rate=sec.get("learning_rate", float, 0.1),
            epochs=sec.get("epochs", int, 300),
            l1=sec.get("l1", float, 0.0),
            seed=sec.get("seed", int, derive_seed(master_seed, "expert", name)),
        )
        if spec.xi <= 0 or spec.learning_rate <= 0 or spec.epochs < 0 or spec.l1 < 0:
            raise ConfigError(f"{where}: xi and learning_rate must be positive, epochs and l1 nonnegative")
    elif kind == "noisy_oracle":
        sigma = sec.get("sigma", float, None)
        schedule = sec.get("sigma_schedule", list, None)
        if (sigma is None) == (schedule is None):
            raise ConfigError(f"{where}: give exactly one of 'sigma' or 'sigma_schedule'")
        if schedule is not None:
            try:
                points = tuple((parse_month(m), float(s)) for m, s in schedule)
            except (TypeError, ValueError, DataError):
                raise ConfigError(f"{where}: sigma_schedule must be a list of [\"YYYY-MM\", sigma] pairs") from None
            if not points or [m for m, _ in points] != sorted({m for m, _ in points}):
                raise ConfigError(f"{where}: sigma_schedule months must be strictly increasing")
            sigma = points
        values = [s for _, s in sigma] if isinstance(sigma, tuple) else [sigma]
        if any(s < 0 for s in values):
            raise ConfigError(f"{where}: noise levels must be nonnegative")
        spec = NoisyOracleExpert(name, sigma, seed=sec.get("seed", int, derive_seed(master_seed, "expert", name)))
    elif kind == "constant":
        spec = ConstantExpert(name, sec.get("value", float, 0.0))
    else:
        raise ConfigError(f"{where}: unknown kind {kind!r}")
    sec.done()
    return spec


def _parse_rule(doc) -> Rule:
    sec = _Section(doc, "rule")
    kind = sec.get("kind", str)
    if kind == "uni":
        rule = Rule.uni()
    elif kind == "boa_adaptive":
        rule = Rule.boa()
    elif kind == "boa_fixed":
        eta = sec.get("eta", float)
        if eta <= 0:
            raise ConfigError("rule.eta must be positive")
        rule = Rule.boa(eta)
    else:
        raise ConfigError(f"rule.kind: unknown rule {kind!r}")
    sec.done()
    return rule


def _parse_loss(doc) -> LossKind:
    sec = _Section(doc, "loss")
    kind = sec.get("kind", str)
    if kind == "squared":
        loss = LossKind.squared()
    elif kind == "huber":
        xi = sec.get("threshold", float, DEFAULT_HUBER_THRESHOLD)
        if xi <= 0:
            raise ConfigError("loss.threshold must be positive")
        loss = LossKind.huber(xi)
    else:
        raise ConfigError(f"loss.kind: unknown loss {kind!r}")
    sec.done()
    return loss


def _parse_universe(doc):
    sec = _Section(doc, "universe")
    kind = sec.get("kind", str)
    if kind == "all":
        out = None
    elif kind in ("top", "bottom"):
        n = sec.get("n", int)
        if n < 10:
            raise ConfigError("universe.n must be at least 10")
        out = TopNByCap(n) if kind == "top" else BottomNByCap(n)
    else:
        raise ConfigError(f"universe.kind: unknown selector {kind!r}")
    sec.done()
    return out


def parse_config(document: dict, base_dir=".") -> ExperimentConfig:
    base = Path(base_dir)
    sec = _Section(document, "config")
    version = sec.get("schema_version", int)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; this build reads version {SCHEMA_VERSION}")
    seed = sec.get("seed", int)
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    data = _parse_data(sec.get("data", dict), base)
    raw_experts = sec.get("experts", list)
    if not raw_experts:
        raise ConfigError("experts: at least one expert is required")
    experts = tuple(_parse_expert(e, i, seed, base) for i, e in enumerate(raw_experts))

    sch = _Section(sec.get("schedule", dict), "schedule")
    schedule = ScheduleConfig(
        start_year=sch.get("start_year", int),
        train_years=sch.get("train_years", int),
        validation_years=sch.get("validation_years", int),
        final_test_year=sch.get("final_test_year", int),
    )
    sch.done()

    weighting = sec.get("weighting", str, EQUAL)
    if weighting not in (EQUAL, VALUE):
        raise ConfigError(f"weighting must be {EQUAL!r} or {VALUE!r}")
    universe = _parse_universe(sec.get("universe", dict, {"kind": "all"}))
    rule = _parse_rule(sec.get("rule", dict, {"kind": "boa_adaptive"}))
    loss = _parse_loss(sec.get("loss", dict, {"kind": "squared"}))
    pretrain = sec.get("pretrain_months", int, 0)
    if pretrain < 0:
        raise ConfigError("pretrain_months must be nonnegative")

    bagging = None
    bag_doc = sec.get("bagging", dict, None)
    if bag_doc is not None:
        bs = _Section(bag_doc, "bagging")
        bagging = BaggingConfig(
            experts=tuple(bs.get("experts", list)),
            n_bags=bs.get("n_bags", int, 10),
            fraction=bs.get("fraction", float, 0.8),
            seed=bs.get("seed", int, None),
        )
        bs.done()

    output_dir = sec.get("output_dir", str, None)
    oracle_step = sec.get("oracle_step", float, None)
    drawdown = sec.get("drawdown", str, "log")
    if drawdown not in ("log", "compound"):
        raise ConfigError("drawdown must be 'log' or 'compound'")
    linearize = sec.get("linearize", bool, True)
    sec.done()

    cfg = ExperimentConfig(
        seed=seed,
        data=data,
        experts=experts,
        schedule=schedule,
        weighting=weighting,
        universe=universe,
        rule=rule,
        loss=loss,
        pretrain_months=pretrain,
        bagging=bagging,
        output_dir=_resolve(output_dir, base) if output_dir is not None else None,
        oracle_step=oracle_step,
        drawdown=drawdown,
        linearize=linearize,
        document=document,
    )
    _check_names(cfg)
    return cfg


def _check_names(cfg: ExperimentConfig) -> None:
    names = [e.name for e in cfg.experts]
    if len(set(names)) != len(names):
        raise ConfigError(f"expert names must be unique, got {names}")
    if cfg.bagging is not None:
        for name in cfg.bagging.experts:
            if name not in names:
                raise ConfigError(f"bagging refers to unknown expert {name!r}")
    all_names = cfg.expert_names
    if len(set(all_names)) != len(all_names):
        raise ConfigError("bagged replica names collide with configured experts")
    reserved = {"Target", "PtfUNI", "PtfBOA"}
    clash = reserved.intersection(all_names)
    if clash:
        raise ConfigError(f"expert names {sorted(clash)} are reserved for report strategies")


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(document, path.parent)
