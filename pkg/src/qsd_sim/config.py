"""Experiment configuration: parsing, validation, defaults, hashing.

TOML is the primary on-disk format (JSON accepted as an equivalent); every
default is materialized into the resolved dictionary so that the metadata
written next to results fully describes the run.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional, Union

import numpy as np

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover - fallback for older interpreters
    import tomli as tomllib

from .domain import Ball, Box, Domain, Interval
from .dynamics import BrownianMotion, CustomAffine, OrnsteinUhlenbeck, SdeModel
from .measures import BmIntervalQsd, EmpiricalLaw
from .redistribution import (
    FixedPolicy,
    FullOccupationPolicy,
    QuantizedPolicy,
    RedistributionPolicy,
    SlidingWindowPolicy,
)
from .schedules import StepSchedule

__all__ = [
    "ConfigError",
    "EXPERIMENT_KINDS",
    "load_config",
    "parse_config",
    "resolve_config",
    "serialize_config",
    "config_hash",
    "build_domain",
    "build_model",
    "build_schedule",
    "build_policy",
]


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"config field '{field}': {message}")


EXPERIMENT_KINDS = (
    "qsd_run",
    "replica_histogram",
    "operator_a",
    "weak_error",
    "exit_tail",
    "policy_compare",
)

_DEFAULTS = {
    "experiment": "qsd_run",
    "model": {"kind": "brownian", "scale": 1.0, "d": 1},
    "domain": {"kind": "interval", "a": 0.0, "b": 1.0},
    "schedule": {"kind": "polynomial", "c": 0.1, "rho": 0.7},
    "redistribution": {"kind": "full"},
    "steps": 2_000_000,
    "seeds": [0],
    "x0": None,          # defaults to the domain center
    "checkpoints": None,  # defaults to a geometric ladder
    "discard_prefix": 0,
}


def load_config(path: Union[str, Path]) -> dict:
    """Read a TOML or JSON config file into a raw dictionary."""
    path = Path(path)
    if not path.exists():
        raise ConfigError("--config", f"no such file: {path}")
    text = path.read_bytes()
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text.decode("utf-8"))
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(str(path), f"parse error: {exc}") from exc


def parse_config(text: str, fmt: str = "toml") -> dict:
    try:
        if fmt == "json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError("<string>", f"parse error: {exc}") from exc


def serialize_config(cfg: dict) -> str:
    """Canonical JSON serialization (sorted keys, round-trips exactly)."""
    return json.dumps(cfg, sort_keys=True, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(serialize_config(cfg).encode("utf-8")).hexdigest()[:16]


def resolve_config(raw: dict) -> dict:
    """Fill defaults and validate; returns a fully materialized dictionary."""
    cfg = {}
    for key, default in _DEFAULTS.items():
        value = raw.get(key, default)
        if isinstance(default, dict) and isinstance(value, dict):
            merged = dict(default)
            merged.update(value)
            value = merged
        cfg[key] = value
    for key in raw:
        if key not in _DEFAULTS and key not in ("out", "threads", "experiment_params"):
            raise ConfigError(key, "unknown top-level key")
    if cfg["experiment"] not in EXPERIMENT_KINDS:
        raise ConfigError("experiment", f"must be one of {EXPERIMENT_KINDS}")
    seeds = cfg["seeds"]
    if not isinstance(seeds, (list, tuple)) or len(seeds) == 0:
        raise ConfigError("seeds", "must be a non-empty list of integers")
    cfg["seeds"] = [int(s) for s in seeds]
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", "seeds must be distinct")
    if int(cfg["steps"]) < 1:
        raise ConfigError("steps", "must be >= 1")
    cfg["experiment_params"] = dict(raw.get("experiment_params", {}))
    # Building the objects validates the sub-configs.
    domain = build_domain(cfg["domain"])
    build_model(cfg["model"])
    build_schedule(cfg["schedule"])
    build_policy(cfg["redistribution"], domain)
    if cfg["x0"] is None:
        lo, hi = domain.bounding_box()
        center = 0.5 * (lo + hi)
        cfg["x0"] = float(center[0]) if domain.d == 1 else center.tolist()
    x0 = cfg["x0"]
    if not domain.contains(x0 if domain.d > 1 else float(np.atleast_1d(x0)[0])):
        raise ConfigError("x0", f"start point {x0} is outside the domain")
    return cfg


def build_domain(spec: dict) -> Domain:
    kind = spec.get("kind", "interval")
    try:
        if kind == "interval":
            return Interval(float(spec["a"]), float(spec["b"]))
        if kind == "box":
            return Box(np.asarray(spec["lo"], dtype=float), np.asarray(spec["hi"], dtype=float))
        if kind == "ball":
            return Ball(np.asarray(spec["center"], dtype=float), float(spec["radius"]))
    except KeyError as exc:
        raise ConfigError(f"domain.{exc.args[0]}", "missing") from exc
    except ValueError as exc:
        raise ConfigError("domain", str(exc)) from exc
    raise ConfigError("domain.kind", f"unknown kind '{kind}'")


def build_model(spec: dict) -> SdeModel:
    kind = spec.get("kind", "brownian")
    try:
        if kind == "brownian":
            return BrownianMotion(scale=float(spec.get("scale", 1.0)), d=int(spec.get("d", 1)))
        if kind == "ou":
            return OrnsteinUhlenbeck(
                theta=float(spec.get("theta", 1.0)),
                mean=spec.get("mean", 0.0),
                scale=float(spec.get("scale", 1.0)),
                d=int(spec.get("d", 1)),
            )
        if kind == "affine":
            return CustomAffine(
                np.asarray(spec["A"], dtype=float),
                np.asarray(spec["v"], dtype=float),
                np.asarray(spec["sigma"], dtype=float),
            )
    except KeyError as exc:
        raise ConfigError(f"model.{exc.args[0]}", "missing") from exc
    except ValueError as exc:
        raise ConfigError("model", str(exc)) from exc
    raise ConfigError("model.kind", f"unknown kind '{kind}'")


def build_schedule(spec: dict) -> StepSchedule:
    kind = spec.get("kind", "polynomial")
    try:
        if kind == "polynomial":
            return StepSchedule.polynomial(float(spec.get("c", 0.1)), float(spec.get("rho", 0.7)))
        if kind == "constant":
            return StepSchedule.constant(float(spec["gamma"]))
    except KeyError as exc:
        raise ConfigError(f"schedule.{exc.args[0]}", "missing") from exc
    except ValueError as exc:
        raise ConfigError("schedule", str(exc)) from exc
    raise ConfigError("schedule.kind", f"unknown kind '{kind}'")


def build_policy(spec: dict, domain: Domain) -> RedistributionPolicy:
    kind = spec.get("kind", "full")
    try:
        if kind == "full":
            return FullOccupationPolicy(d=domain.d)
        if kind == "window":
            return SlidingWindowPolicy(
                rule=spec.get("rule", "sqrt"),
                param=float(spec.get("param", 0.5)),
                d=domain.d,
            )
        if kind == "quantized":
            eps = float(spec.get("eps", 0.01))
            partition = domain.build_partition(eps)
            return QuantizedPolicy(partition, cell_law=spec.get("cell_law", "dirac"))
        if kind == "fixed":
            return FixedPolicy(_fixed_measure(spec, domain))
    except KeyError as exc:
        raise ConfigError(f"redistribution.{exc.args[0]}", "missing") from exc
    except ValueError as exc:
        raise ConfigError("redistribution", str(exc)) from exc
    raise ConfigError("redistribution.kind", f"unknown kind '{kind}'")


def _fixed_measure(spec: dict, domain: Domain):
    measure = spec.get("measure", "uniform")
    if measure == "uniform":
        if not isinstance(domain, Interval):
            raise ConfigError("redistribution.measure", "uniform fixed law needs an interval domain")
        return domain
    if measure == "sin":
        if not isinstance(domain, Interval):
            raise ConfigError("redistribution.measure", "sin fixed law needs an interval domain")
        return BmIntervalQsd(domain.a, domain.b)
    if measure == "atoms":
        return EmpiricalLaw(
            np.asarray(spec["atoms"], dtype=float),
            np.asarray(spec["weights"], dtype=float) if "weights" in spec else None,
        )
    raise ConfigError("redistribution.measure", f"unknown fixed measure '{measure}'")
