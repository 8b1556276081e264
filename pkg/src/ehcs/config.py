"""JSON problem configs: one document describes one EHCS.

Layout::

    {
      "plant": {"a_closed": 0.95, "a_open": 1.02},
      "channel": {"lambda": 0.98, "tx_threshold": 4},
      "source": {"type": "ergodic", "transition": [[...]], "energy_map": [...]},
      "battery_capacity": 3,
      "disturbance": {"kind": "uniform", "half_width": 0.5},
      "initial": {"x0": [10], "battery": 0, "latent": 1, "history": 0}
    }

Scalars are accepted for 1x1 plant matrices. Latent labels in ``initial``
are 1-based.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema
import numpy as np

from .harvest import (SolarSourceSpec, build_deterministic_periodic, build_ergodic,
                      build_periodic_stochastic)
from .model import (ChannelModel, DisturbanceModel, EhcsSpec, EhcsValidationError,
                    PlantModel, ValidatedEhcs, validate_ehcs)

SCHEMA_VERSION = 1

_matrix = {"oneOf": [{"type": "number"},
                     {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}]}
_stochastic = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_ints = {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1}

SCHEMA = {
    "type": "object",
    "required": ["plant", "channel", "source", "battery_capacity"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "plant": {
            "type": "object",
            "required": ["a_closed", "a_open"],
            "properties": {"a_closed": _matrix, "a_open": _matrix},
        },
        "channel": {
            "type": "object",
            "required": ["lambda", "tx_threshold"],
            "properties": {
                "lambda": {"type": "number", "minimum": 0, "maximum": 1},
                "tx_threshold": {"type": "integer", "minimum": 1},
            },
        },
        "source": {
            "type": "object",
            "required": ["type"],
            "properties": {"type": {"enum": ["deterministic_periodic", "ergodic", "periodic_stochastic"]}},
            "allOf": [
                {"if": {"properties": {"type": {"const": "deterministic_periodic"}}},
                 "then": {"required": ["schedule"], "properties": {"schedule": _ints}}},
                {"if": {"properties": {"type": {"const": "ergodic"}}},
                 "then": {"required": ["transition", "energy_map"],
                          "properties": {"transition": _stochastic, "energy_map": _ints}}},
                {"if": {"properties": {"type": {"const": "periodic_stochastic"}}},
                 "then": {"required": ["period", "max_intensity", "max_damping",
                                       "ideal_profile", "cloud_chain", "cloud_loss"],
                          "properties": {
                              "period": {"type": "integer", "minimum": 1},
                              "max_intensity": {"type": "number", "minimum": 0},
                              "max_damping": {"type": "number", "minimum": 0},
                              "ideal_profile": {"oneOf": [{"const": "sine"},
                                                          {"type": "array", "items": {"type": "number"}}]},
                              "cloud_chain": _stochastic,
                              "cloud_loss": {"type": "array", "items": {"type": "number"}},
                          }}},
            ],
        },
        "battery_capacity": {"type": "integer", "minimum": 0},
        "disturbance": {
            "type": "object",
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["none", "uniform", "gaussian"]},
                "half_width": {"type": "number", "minimum": 0},
                "covariance": _stochastic,
            },
        },
        "initial": {
            "type": "object",
            "properties": {
                "x0": {"oneOf": [{"type": "number"}, {"type": "array", "items": {"type": "number"}}]},
                "battery": {"type": "integer", "minimum": 0},
                "latent": {"type": "integer", "minimum": 1},
                "history": {"enum": [0, 1]},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Problem:
    """A loaded config: validated EHCS, initial conditions and provenance hash."""

    ehcs: ValidatedEhcs
    x0: np.ndarray
    battery0: int
    latent0: int
    history0: int
    config_hash: str
    raw: dict


def config_hash(doc: dict) -> str:
    canon = json.dumps(doc, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _where(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "required":
        missing = err.message.split("'")[1] if "'" in err.message else ""
        path = f"{path}.{missing}" if path else missing
    return path or "<root>"


def build_source(doc: dict):
    kind = doc["type"]
    if kind == "deterministic_periodic":
        return build_deterministic_periodic(doc["schedule"])
    if kind == "ergodic":
        return build_ergodic(doc["transition"], doc["energy_map"])
    return build_periodic_stochastic(SolarSourceSpec(
        period=doc["period"], max_intensity=doc["max_intensity"], max_damping=doc["max_damping"],
        ideal_profile=doc["ideal_profile"], cloud_chain=np.asarray(doc["cloud_chain"], dtype=float),
        cloud_loss=doc["cloud_loss"]))


def problem_from_dict(doc: dict) -> Problem:
    errors = sorted(jsonschema.Draft7Validator(SCHEMA).iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        raise ConfigError("; ".join(f"{_where(e)}: {e.message}" for e in errors))
    plant = PlantModel(doc["plant"]["a_closed"], doc["plant"]["a_open"])
    n = plant.dim
    try:
        source = build_source(doc["source"])
    except ValueError as exc:
        raise ConfigError(f"source: {exc}") from exc
    d = doc.get("disturbance", {"kind": "none"})
    if d["kind"] == "uniform":
        dist = DisturbanceModel.uniform(d.get("half_width", 0.0), n)
    elif d["kind"] == "gaussian":
        if "covariance" not in d:
            raise ConfigError("disturbance.covariance: required for gaussian disturbance")
        dist = DisturbanceModel.gaussian(d["covariance"])
    else:
        dist = DisturbanceModel.none(n)
    spec = EhcsSpec(plant, ChannelModel(doc["channel"]["lambda"], doc["channel"]["tx_threshold"]),
                    source, doc["battery_capacity"], dist)
    try:
        ehcs = validate_ehcs(spec)
    except EhcsValidationError as exc:
        raise ConfigError("; ".join(exc.errors)) from exc
    init = doc.get("initial", {})
    x0 = np.atleast_1d(np.asarray(init.get("x0", np.zeros(n)), dtype=float))
    if x0.shape != (n,):
        raise ConfigError(f"initial.x0: expected {n} entries, got {x0.size}")
    b0, l0, f0 = init.get("battery", 0), init.get("latent", 1), init.get("history", 0)
    if b0 > ehcs.b_cap:
        raise ConfigError(f"initial.battery: {b0} exceeds battery_capacity {ehcs.b_cap}")
    if l0 > ehcs.n_latent:
        raise ConfigError(f"initial.latent: {l0} exceeds the {ehcs.n_latent} latent states")
    return Problem(ehcs, x0, int(b0), int(l0) - 1, int(f0), config_hash(doc), doc)


def load_problem(path) -> Problem:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    return problem_from_dict(doc)


CONFIG_DIR = Path(__file__).parent / "configs"


def bundled_config(name: str) -> Path:
    """Path of a shipped example config, e.g. ``"sec6b"``."""
    p = CONFIG_DIR / f"{name}.json"
    if not p.exists():
        raise FileNotFoundError(p)
    return p
