import json

import pytest

from hpac.config import load_run_config, parse_override
from hpac.errors import RunConfigError


def _write(tmp_path, obj, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return path


def test_defaults():
    cfg = load_run_config(environ={})
    assert cfg.model.d == 96 and cfg.model.heads == 8 and cfg.model.k == 20
    assert cfg.train.epochs == 40 and cfg.train.batch_size == 40 and cfg.train.lr == 1e-3
    assert cfg.attack.eps == 0.3 and cfg.attack.alpha == 0.4 and cfg.attack.iterations == 20
    assert cfg.data.ratios == [0.6, 0.2, 0.2]


def test_precedence(tmp_path):
    path = _write(tmp_path, {"model.d": 32, "model.heads": 4, "train.seed": 5})
    cfg = load_run_config(path, {"model.d": 16}, environ={"HPAC_SEED": "9"})
    assert cfg.model.d == 16
    assert cfg.train.seed == 5          # file beats environment
    assert cfg.model.seed == 9          # environment beats default
    cfg = load_run_config(path, seed=2, environ={"HPAC_SEED": "9"})
    assert (cfg.train.seed, cfg.model.seed, cfg.data.split_seed, cfg.attack.seed) == (2, 2, 2, 2)


def test_shared_seed_key(tmp_path):
    cfg = load_run_config(_write(tmp_path, {"seed": 7, "model.seed": 1}), environ={})
    assert cfg.model.seed == 1 and cfg.train.seed == 7 and cfg.data.split_seed == 7


def test_paths_resolve_against_config_dir(tmp_path):
    cfg = load_run_config(_write(tmp_path, {"data.inputs": "cap.pcap", "data.labels": "l.csv"}), environ={})
    assert cfg.data.inputs == [str(tmp_path / "cap.pcap")]
    assert cfg.data.labels == str(tmp_path / "l.csv")


def test_attack_inherits_focal_and_threshold(tmp_path):
    cfg = load_run_config(_write(tmp_path, {"train.focal_gamma": 1.0, "eval.threshold": 0.7}), environ={})
    assert cfg.attack.focal_gamma == 1.0 and cfg.attack.threshold == 0.7


@pytest.mark.parametrize("obj", [
    {"model.depth": 3},
    {"modeld": 3},
    {"model": {"d": 3}},
    {"model.d": "wide"},
    {"model.d": 97},
    {"model.positional": 1},
    {"train.epochs": -1},
    {"attack.method": "cw"},
    {"attack.focal_alpha": 0.5},
])
def test_rejects_bad_config(tmp_path, obj):
    with pytest.raises(RunConfigError):
        load_run_config(_write(tmp_path, obj), environ={})


def test_rejects_non_object_and_bad_json(tmp_path):
    with pytest.raises(RunConfigError):
        load_run_config(_write(tmp_path, [1, 2]), environ={})
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(RunConfigError):
        load_run_config(bad, environ={})
    with pytest.raises(RunConfigError):
        load_run_config(environ={"HPAC_SEED": "x"})


def test_parse_override():
    assert parse_override("model.d=32") == ("model.d", 32)
    assert parse_override("data.labels=l.csv") == ("data.labels", "l.csv")
    assert parse_override("model.positional=false") == ("model.positional", False)
    with pytest.raises(RunConfigError):
        parse_override("model.d")
