"""Experiment configuration files.

A config is a flat JSON object.  ``experiment`` picks the experiment; every
other key is either a common key (``seed``, ``repetitions``,
``output_dir``) or a parameter of that experiment.  A parameter given as a
JSON list is a grid: the harness runs the Cartesian product of all list
values.  Unknown keys are rejected.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "EXPERIMENTS",
    "parse_config",
    "config_from_dict",
    "serialize_config",
    "grid_points",
]


class ConfigError(ValueError):
    pass


# Validators return an error message or None.
def _positive(v):
    return None if _is_number(v) and v > 0 else "must be > 0"


def _nonneg(v):
    return None if _is_number(v) and v >= 0 else "must be >= 0"


def _unit_open(v):
    return None if _is_number(v) and 0 < v < 1 else "must satisfy 0 < value < 1"


def _unit_closed(v):
    return None if _is_number(v) and 0 <= v <= 1 else "must lie in [0, 1]"


def _momentum(v):
    return None if _is_number(v) and 0 <= v < 1 else "must lie in [0, 1)"


def _count(v):
    return None if _is_int(v) and v >= 0 else "must be an integer >= 0"


def _pos_count(v):
    return None if _is_int(v) and v >= 1 else "must be an integer >= 1"


def _opt_positive(v):
    return None if v is None else _positive(v)


def _opt_path(v):
    return None if v is None or isinstance(v, str) else "must be a path string or null"


def _choice(*options):
    def check(v):
        return None if v in options else f"must be one of {', '.join(options)}"

    return check


def _is_number(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_int(v):
    return isinstance(v, int) and not isinstance(v, bool)


# name -> (default, validator, grid allowed)
_SCHEMAS = {
    "bounds": {
        "scale": (1.0, _positive, False),
    },
    "cvar": {
        "scale": (1.0, _positive, False),
    },
    "dro-kl": {
        "mode": ("safe", _choice("baseline", "safe"), True),
        "lambda": (1.0, _positive, True),
        "rho": (1e-3, _unit_open, True),
        "batch_size": (10, _pos_count, True),
        "stepsize": (1e-5, _positive, True),
        "momentum": (0.9, _momentum, True),
        "epochs": (30, _count, True),
        "n": (2000, _pos_count, False),
        "d": (8, _pos_count, False),
        "feature_scale": (math.sqrt(10.0), _positive, False),
        "noise": (0.5, _nonneg, False),
        "outlier_frac": (0.02, _unit_closed, False),
        "data_seed": (0, _count, False),
        "data_path": (None, _opt_path, False),
    },
    "dro-uot": {
        "mode": ("safe", _choice("sumexp_baseline", "safe", "erm"), True),
        "lambda": (1.0, _positive, True),
        "beta": (1.0, _positive, True),
        "rho": (0.1, _unit_open, True),
        "inner_iters": (5, _pos_count, True),
        "inner_stepsize": (None, _opt_positive, True),
        "cost_scale": (1.0, _positive, True),
        "stepsize": (1e-3, _positive, True),
        "iters": (5000, _count, True),
        "eval_every": (500, _pos_count, False),
        "n_train": (600, _pos_count, False),
        "n_val": (300, _pos_count, False),
        "n_test": (2000, _pos_count, False),
        "separation": (2.0, _positive, False),
        "noise_ratio": (0.25, _unit_closed, False),
        "data_seed": (0, _count, False),
        "train_path": (None, _opt_path, False),
        "val_path": (None, _opt_path, False),
        "test_path": (None, _opt_path, False),
    },
    "eot": {
        "mode": ("safe_semidual", _choice("dual_baseline", "safe_semidual"), True),
        "epsilon": (0.01, _positive, False),
        "rho": (0.1, _unit_open, True),
        "C": (1.0, _positive, True),
        "bandwidth": (10.0, _positive, True),
        "iters": (20000, _count, True),
        "test_size": (1000, _pos_count, False),
        "divergence_factor": (10.0, _positive, False),
        "fixture_seed": (0, _count, False),
        "reference_runs": (5, _pos_count, False),
        "reference_iters": (50000, _count, False),
        "reference_C": (10.0, _positive, False),
    },
    "overflow-demo": {
        "epsilon": (0.01, _positive, False),
        "z": (7.1, lambda v: None if _is_number(v) else "must be a finite number", False),
        "rho": (0.1, _unit_open, False),
        "C": (1.0, _positive, False),
    },
}

EXPERIMENTS = tuple(_SCHEMAS)
_COMMON = ("experiment", "seed", "repetitions", "output_dir")


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    seed: int = 0
    repetitions: int = 1
    output_dir: str = "results"
    params: dict = field(default_factory=dict)

    def grid_keys(self) -> list:
        return sorted(k for k, v in self.params.items() if isinstance(v, list))


def config_from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    exp = raw.get("experiment")
    if exp is None:
        raise ConfigError("missing key 'experiment'")
    if exp not in _SCHEMAS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}")
    schema = _SCHEMAS[exp]
    for key in raw:
        if key not in _COMMON and key not in schema:
            raise ConfigError(f"unknown key '{key}' for experiment '{exp}'")

    seed = raw.get("seed", 0)
    if not (_is_int(seed) and seed >= 0):
        raise ConfigError("seed must be an integer >= 0")
    reps = raw.get("repetitions", 1)
    if not (_is_int(reps) and reps >= 1):
        raise ConfigError("repetitions must be an integer >= 1")
    out = raw.get("output_dir", "results")
    if not isinstance(out, str) or not out:
        raise ConfigError("output_dir must be a nonempty path string")

    params = {}
    for key, (default, check, grid_ok) in schema.items():
        value = raw.get(key, default)
        if isinstance(value, list):
            if not grid_ok:
                raise ConfigError(f"{key} does not accept a list of values")
            if not value:
                raise ConfigError(f"{key} grid must not be empty")
            values = value
        else:
            values = [value]
        for v in values:
            msg = check(v)
            if msg:
                raise ConfigError(f"{key} {msg}")
        params[key] = list(value) if isinstance(value, list) else value
    return ExperimentConfig(exp, seed, reps, out, params)


def parse_config(path) -> ExperimentConfig:
    """Read, validate and complete a JSON config file."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from None
    return config_from_dict(raw)


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical JSON text; ``parse`` of it gives back an equal config."""
    raw = {
        "experiment": config.experiment,
        "seed": config.seed,
        "repetitions": config.repetitions,
        "output_dir": config.output_dir,
    }
    raw.update(config.params)
    return json.dumps(raw, sort_keys=True, indent=2) + "\n"


def grid_points(config: ExperimentConfig) -> list:
    """All parameter combinations, list-valued keys varying in sorted key order."""
    keys = config.grid_keys()
    base = {k: v for k, v in config.params.items() if k not in keys}
    points = []
    for combo in itertools.product(*(config.params[k] for k in keys)):
        p = dict(base)
        p.update(zip(keys, combo))
        points.append(p)
    return points
