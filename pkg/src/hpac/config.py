"""Run configuration: one JSON object of flat dotted keys, e.g.::

    {"model.k": 20, "model.d": 96, "train.epochs": 40,
     "data.inputs": ["capture.pcap"], "data.labels": "labels.csv"}

Precedence is flag > file > ``HPAC_SEED`` environment (seeds only) > default.
Relative paths in the file resolve against the file's directory.
"""

import json
import os
from dataclasses import dataclass, field, fields, replace
from typing import List, Optional

from .adversarial import AttackConfig
from .errors import ConfigurationError, RunConfigError
from .model import ModelConfig
from .trainer import TrainConfig

SEED_ENV = "HPAC_SEED"


@dataclass(frozen=True)
class DataConfig:
    inputs: List[str] = field(default_factory=list)
    labels: Optional[str] = None
    ratios: List[float] = field(default_factory=lambda: [0.6, 0.2, 0.2])
    split_seed: int = 0


@dataclass(frozen=True)
class EvalConfig:
    threshold: float = 0.5


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def to_flat(self) -> dict:
        return {f"{section}.{name}": getattr(getattr(self, section), name)
                for section, name in KEYS}


_SECTIONS = {"model": ModelConfig, "train": TrainConfig, "data": DataConfig, "eval": EvalConfig}
_ATTACK_KEYS = ("method", "eps", "alpha", "iterations", "seed")
KEYS = {(s, f.name): f for s, cls in _SECTIONS.items() for f in fields(cls)}
KEYS.update({("attack", f.name): f for f in fields(AttackConfig) if f.name in _ATTACK_KEYS})
SEED_KEYS = ("model.seed", "train.seed", "data.split_seed", "attack.seed")
PATH_KEYS = ("data.inputs", "data.labels", "train.checkpoint_path")


def _coerce(key, value, f):
    t = f.type
    ok = True
    if t is bool:
        ok = isinstance(value, bool)
    elif t is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif t is float:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        value = float(value) if ok else value
    elif t is str:
        ok = isinstance(value, str)
    elif t == Optional[str]:
        ok = value is None or isinstance(value, str)
    elif t == List[str]:
        value = [value] if isinstance(value, str) else value
        ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
    elif t == List[float]:
        ok = isinstance(value, list) and all(isinstance(v, (int, float)) for v in value)
        value = [float(v) for v in value] if ok else value
    if not ok:
        raise RunConfigError(f"config key {key!r}: bad value {value!r}")
    return value


def parse_override(text: str):
    """``key=value`` with value parsed as JSON when possible, else a string."""
    if "=" not in text:
        raise RunConfigError(f"override {text!r} must look like key=value")
    key, raw = text.split("=", 1)
    try:
        return key.strip(), json.loads(raw)
    except ValueError:
        return key.strip(), raw


def load_run_config(path=None, overrides=None, seed=None, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    flat = {}
    base = None
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                flat = json.load(fh)
            except ValueError as exc:
                raise RunConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(flat, dict):
            raise RunConfigError(f"{path}: top level must be a JSON object")
        base = os.path.dirname(os.path.abspath(path))
        if "seed" in flat:
            shared = flat.pop("seed")
            for key in SEED_KEYS:
                flat.setdefault(key, shared)
    from_file = set(flat)
    flat.update(overrides or {})

    if seed is None and environ.get(SEED_ENV, "").strip():
        try:
            env_seed = int(environ[SEED_ENV])
        except ValueError:
            raise RunConfigError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
        for key in SEED_KEYS:
            if key not in flat:
                flat[key] = env_seed
    if seed is not None:
        for key in SEED_KEYS:
            flat[key] = int(seed)

    sections = {name: {} for name in ("model", "train", "attack", "data", "eval")}
    for key, value in flat.items():
        parts = key.split(".")
        if len(parts) != 2 or tuple(parts) not in KEYS:
            raise RunConfigError(f"unknown config key {key!r}")
        if isinstance(value, dict):
            raise RunConfigError(f"config key {key!r}: nested objects are not allowed")
        value = _coerce(key, value, KEYS[tuple(parts)])
        if key in PATH_KEYS and key in from_file and base is not None and value is not None:
            value = [_resolve(base, v) for v in value] if isinstance(value, list) else _resolve(base, value)
        sections[parts[0]][parts[1]] = value

    try:
        train = TrainConfig(**sections["train"]).validate()
        ev = EvalConfig(**sections["eval"])
        attack = AttackConfig(**sections["attack"])
        attack = replace(attack, focal_alpha=train.focal_alpha, focal_gamma=train.focal_gamma,
                         threshold=ev.threshold).validate()
        cfg = RunConfig(model=ModelConfig(**sections["model"]).validate(), train=train,
                        attack=attack, data=DataConfig(**sections["data"]), eval=ev)
    except ConfigurationError as exc:
        if isinstance(exc, RunConfigError):
            raise
        raise RunConfigError(str(exc)) from None
    return cfg


def _resolve(base, p):
    return p if os.path.isabs(p) else os.path.join(base, p)
