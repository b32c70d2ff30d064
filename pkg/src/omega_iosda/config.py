"""Experiment configuration: a strict YAML schema with dotted overrides.

Layout::

    seed: 0
    task:
      kind: synthetic            # or csv
      synthetic: {num_classes: 5, ..., imbalance: {...}, shift: {...}}
      csv: {source: path, target: path, num_classes: 5}
    model: {widths: [64, 64], d: 32, bn_momentum: 0.1, bn_eps: 1.0e-5}
    train: {tau: 0.05, ...}      # TrainConfig fields except seed
    eval: {enabled: true, dump_clusters: false}
    sweep: {seeds: [0, 1, 2, 3, 4], variants: [...], r: [...], omega: [...]}
"""
import copy
import dataclasses
import math

import yaml

from .data import ImbalanceSpec, ShiftParams, SyntheticTask
from .errors import ConfigError, IOSDAError
from .training import TrainConfig

VARIANTS = {
    "full": {},
    "no_me": {"r": 0.0},
    "no_cl": {"eta2": 0.0},
    "baseline": {"r": 0.0, "eta2": 0.0},
}
DEFAULT_BATCH = 32


def _fields(cls, exclude=()):
    return {f.name: f.default if f.default is not dataclasses.MISSING else f.default_factory()
            for f in dataclasses.fields(cls) if f.init and f.name not in exclude}


def _synthetic_defaults():
    out = _fields(SyntheticTask, exclude=("imbalance", "shift"))
    out["imbalance"] = dataclasses.asdict(ImbalanceSpec())
    out["shift"] = dataclasses.asdict(SyntheticTask().shift)
    return out


def defaults():
    """The full default configuration as a plain nested dict."""
    return {
        "seed": 0,
        "task": {
            "kind": "synthetic",
            "synthetic": _synthetic_defaults(),
            "csv": {"source": None, "target": None, "num_classes": None},
        },
        "model": {"widths": [64, 64], "d": 32, "bn_momentum": 0.1, "bn_eps": 1e-5},
        "train": _fields(TrainConfig, exclude=("seed",)),
        "eval": {"enabled": True, "dump_clusters": False},
        "sweep": {"seeds": [0, 1, 2, 3, 4], "variants": list(VARIANTS), "r": [], "omega": []},
    }


def _merge(base, update, path=""):
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{where!r} must be a mapping")
            _merge(base[key], value, where + ".")
        else:
            base[key] = _coerce(base[key], value, where)


def _coerce(default, value, where):
    """Match ``value`` to the type of its default where one is fixed."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where!r} must be true or false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where!r} must be an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if value is None:
            return None
        if isinstance(value, list):
            # vector-valued shifts, one entry per dimension or class
            return [_coerce(default, v, f"{where}[{i}]") for i, v in enumerate(value)]
        # YAML reads exponents without a dot, such as 1e-3, as strings
        if isinstance(value, str):
            try:
                value = float(value)
            except ValueError:
                raise ConfigError(f"{where!r} must be a number, got {value!r}") from None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where!r} must be a number, got {value!r}")
        return float(value)
    return value


def parse_override(text):
    """``"train.r=0.3"`` -> ``(["train", "r"], 0.3)``; the value is YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not KEY=VALUE")
    key, raw = text.split("=", 1)
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {text!r}: {exc}") from None
    return key.split("."), value


def _nest(path, value):
    out = value
    for part in reversed(path):
        out = {part: out}
    return out


def load_config(path=None, overrides=(), seed=None):
    """Defaults, then the file at ``path``, then ``--set`` overrides, then
    ``seed``. Validates the result and returns a nested dict."""
    cfg = defaults()
    user_batch = False
    user_lr = False
    layers = []
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        layers.append(data)
    for text in overrides:
        layers.append(_nest(*parse_override(text)))
    for layer in layers:
        train = layer.get("train") or {}
        user_batch |= isinstance(train, dict) and "batch_size" in train
        user_lr |= isinstance(train, dict) and "base_lr" in train
        _merge(cfg, layer)
    if seed is not None:
        cfg["seed"] = seed
    if user_batch and not user_lr:
        # larger batches get a proportionally larger step
        cfg["train"]["base_lr"] *= math.sqrt(cfg["train"]["batch_size"] / DEFAULT_BATCH)
    validate(cfg)
    return cfg


def validate(cfg):
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a non-negative integer")
    kind = cfg["task"]["kind"]
    if kind not in ("synthetic", "csv"):
        raise ConfigError(f"task.kind must be 'synthetic' or 'csv', got {kind!r}")
    if kind == "csv":
        c = cfg["task"]["csv"]
        if not c["source"] or not c["target"]:
            raise ConfigError("task.csv needs source and target paths")
    else:
        synthetic_task(cfg)
    m = cfg["model"]
    if not isinstance(m["widths"], list) or not all(isinstance(w, int) and w > 0 for w in m["widths"]):
        raise ConfigError("model.widths must be a list of positive integers")
    if not isinstance(m["d"], int) or m["d"] < 1:
        raise ConfigError("model.d must be a positive integer")
    train_config(cfg)
    sweep = cfg["sweep"]
    bad = [v for v in sweep["variants"] if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown sweep variants {bad}; choose from {list(VARIANTS)}")
    for key in ("seeds", "variants", "r", "omega"):
        if not isinstance(sweep[key], list):
            raise ConfigError(f"sweep.{key} must be a list")
    for r in sweep["r"]:
        train_config(cfg, r=r)


def synthetic_task(cfg):
    s = copy.deepcopy(cfg["task"]["synthetic"])
    try:
        imbalance = ImbalanceSpec(**s.pop("imbalance"))
        shift = ShiftParams(**s.pop("shift"))
        return SyntheticTask(imbalance=imbalance, shift=shift, **s)
    except (TypeError, IOSDAError) as exc:
        raise ConfigError(f"task.synthetic: {exc}") from None


def train_config(cfg, **changes):
    try:
        return TrainConfig(seed=cfg["seed"], **{**cfg["train"], **changes})
    except (TypeError, IOSDAError) as exc:
        raise ConfigError(f"train: {exc}") from None


def sweep_rows(cfg):
    """``(name, config, variant)`` for every row of an ablation table: the
    named variants, then full runs at each swept ``r`` and each swept omega."""
    rows = [(v, cfg, v) for v in cfg["sweep"]["variants"]]
    for r in cfg["sweep"]["r"]:
        c = copy.deepcopy(cfg)
        c["train"]["r"] = float(r)
        rows.append((f"r={r}", c, "full"))
    for omega in cfg["sweep"]["omega"]:
        c = copy.deepcopy(cfg)
        c["task"]["synthetic"]["imbalance"]["omega"] = float(omega)
        synthetic_task(c)
        rows.append((f"omega={omega}", c, "full"))
    return rows


def dump(cfg):
    return yaml.safe_dump(cfg, sort_keys=True)
