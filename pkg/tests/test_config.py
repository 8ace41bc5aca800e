import copy
import json
from pathlib import Path

import pytest

from aggfolio.config import (
    DEFAULT_OUTPUT_DIR,
    OUTPUT_DIR_ENV,
    PanelData,
    derive_seed,
    load_config,
    parse_config,
)
from aggfolio.errors import ConfigError
from aggfolio.experts import LinearHuberExpert, NoisyOracleExpert
from aggfolio.portfolio import TopNByCap

BASE = {
    "schema_version": 1,
    "seed": 7,
    "data": {"synthetic": {"n_assets": 50, "n_months": 60}},
    "experts": [
        {"name": "lin", "kind": "linear_huber", "epochs": 10},
        {"name": "orc", "kind": "noisy_oracle", "sigma": 0.1},
    ],
    "schedule": {"start_year": 1990, "train_years": 2, "validation_years": 1, "final_test_year": 1994},
}


def doc(**changes):
    d = copy.deepcopy(BASE)
    d.update(changes)
    return d


def test_defaults():
    cfg = parse_config(doc())
    assert cfg.rule.label == "BOA"
    assert cfg.weighting == "equal" and cfg.universe is None
    assert cfg.pretrain_months == 0 and cfg.linearize
    assert isinstance(cfg.experts[0], LinearHuberExpert) and cfg.experts[0].xi == 0.999
    assert cfg.expert_names == ["lin", "orc"]


@pytest.mark.parametrize("mutate, match", [
    (lambda d: d.update(extra=1), "unknown key"),
    (lambda d: d["schedule"].update(test_years=1), "unknown key"),
    (lambda d: d["experts"][0].update(sigma=1.0), "unknown key"),
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d.pop("seed"), "missing required key 'seed'"),
    (lambda d: d.update(seed="7"), "expected int"),
    (lambda d: d["experts"].append({"name": "lin", "kind": "constant"}), "unique"),
    (lambda d: d["experts"].append({"name": "PtfBOA", "kind": "constant"}), "reserved"),
    (lambda d: d.update(experts=[]), "at least one"),
    (lambda d: d["experts"][1].pop("sigma"), "sigma"),
    (lambda d: d.update(rule={"kind": "boa_fixed", "eta": -1.0}), "positive"),
    (lambda d: d.update(rule={"kind": "ewa"}), "unknown rule"),
    (lambda d: d.update(universe={"kind": "top", "n": 5}), "at least 10"),
    (lambda d: d.update(weighting="cap"), "weighting"),
    (lambda d: d.update(data={"panel": "p.csv"}), "schema"),
    (lambda d: d.update(data={}), "exactly one"),
    (lambda d: d.update(bagging={"experts": ["nope"]}), "unknown expert"),
    (lambda d: d.update(bagging={"experts": ["orc"]}), "bagging"),
    (lambda d: d.update(bagging={"experts": ["lin"], "fraction": 1.2}), "bagging"),
])
def test_rejections(mutate, match):
    d = doc()
    mutate(d)
    with pytest.raises(ConfigError, match=match):
        cfg = parse_config(d)
        cfg.all_experts()


def test_bagging_adds_replicas():
    cfg = parse_config(doc(bagging={"experts": ["lin"], "n_bags": 3}))
    assert cfg.expert_names == ["lin", "orc", "lin_0", "lin_1", "lin_2"]
    assert "bagging" in cfg.seeds()


def test_full_options():
    cfg = parse_config(doc(
        weighting="value", universe={"kind": "top", "n": 20}, rule={"kind": "boa_fixed", "eta": 2},
        loss={"kind": "huber", "threshold": 0.5}, pretrain_months=12, drawdown="compound",
        experts=[{"name": "o", "kind": "noisy_oracle", "sigma_schedule": [["1990-01", 0.1], ["1993-01", 1.0]]}],
    ))
    assert cfg.universe == TopNByCap(20)
    assert cfg.rule.eta == 2.0
    assert cfg.loss.threshold == 0.5
    assert isinstance(cfg.experts[0], NoisyOracleExpert) and len(cfg.experts[0].sigma) == 2


def test_seeds_derive_from_master():
    a = parse_config(doc())
    b = parse_config(doc(seed=8))
    assert a.experts[1].seed == derive_seed(7, "expert", "orc")
    assert a.experts[1].seed != b.experts[1].seed
    assert parse_config(doc()).experts == a.experts


def test_hash_is_canonical():
    a = parse_config(doc())
    reordered = dict(reversed(list(doc().items())))
    assert parse_config(reordered).sha256 == a.sha256
    assert parse_config(doc(seed=8)).sha256 != a.sha256


def test_output_dir_precedence(monkeypatch, tmp_path):
    monkeypatch.delenv(OUTPUT_DIR_ENV, raising=False)
    cfg = parse_config(doc())
    assert str(cfg.resolve_output_dir()) == DEFAULT_OUTPUT_DIR
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert cfg.resolve_output_dir() == tmp_path / "env"
    with_dir = parse_config(doc(output_dir="cfgout"), tmp_path)
    assert with_dir.resolve_output_dir() == tmp_path / "cfgout"
    assert with_dir.resolve_output_dir(tmp_path / "cli") == tmp_path / "cli"


def test_load_config_resolves_paths(tmp_path):
    path = tmp_path / "sub" / "c.json"
    path.parent.mkdir()
    path.write_text(json.dumps(doc(data={"panel": "p.csv", "schema": "/abs/s.json"})))
    cfg = load_config(path)
    assert cfg.data == PanelData(path.parent / "p.csv", Path("/abs/s.json"))


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
