"""JSON configuration files and their schemas."""

from __future__ import annotations

import json
from pathlib import Path

import jsonschema

from .basis import BasisSpec
from .counts import FraudMatrix
from .fit import FitConfig
from .simulate import SimScenario


class ConfigError(ValueError):
    """Configuration file does not match its schema."""


_number = {"type": "number"}
_matrix = {"type": "array", "items": {"type": "array", "items": _number, "minItems": 1}, "minItems": 1}
_int_matrix = {
    "type": "array",
    "items": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
    "minItems": 1,
}

BASIS_SCHEMA = {
    "type": "object",
    "properties": {
        "degree": {"type": "integer", "minimum": 0},
        "num_basis": {"type": "integer", "minimum": 1},
        "t_lo": _number,
        "t_hi": _number,
    },
}

FRAUD_SCHEMA = {
    "oneOf": [
        _matrix,
        {"type": "object", "properties": {"fraud_matrix": _matrix}, "required": ["fraud_matrix"]},
    ]
}

FIT_SCHEMA = {
    "type": "object",
    "properties": {
        "basis": BASIS_SCHEMA,
        "fit": {
            "type": "object",
            "properties": {
                "max_outer_iters": {"type": "integer", "minimum": 1},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
                "inner_tol": {"type": "number", "exclusiveMinimum": 0},
                "sigma_sq_floor": {"type": "number", "exclusiveMinimum": 0},
                "sigma_gamma_floor": {"type": "number", "minimum": 0},
                "b_runs": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer", "minimum": 0},
                "variance_ratios": {"type": ["array", "null"], "items": {"type": "number", "minimum": 0}},
                "count_polish": {"type": "boolean"},
                "polish_width": {"type": "integer", "minimum": 1},
            },
        },
    },
}

SCENARIO_SCHEMA = {
    "type": "object",
    "properties": {
        "case_id": {"type": ["integer", "null"], "enum": [1, 2, 3, 4, None]},
        "seed": {"type": "integer", "minimum": 0},
        "replicates": {"type": "integer", "minimum": 1},
        "num_times": {"type": "integer", "minimum": 1},
        "basis": BASIS_SCHEMA,
        "base_gammas": _matrix,
        "true_counts": _int_matrix,
        "reported_counts": {"oneOf": [_int_matrix, {"type": "null"}]},
        "gammas": _matrix,
        "sigma_gamma_sq": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "sigma_sq": {"type": "number", "minimum": 0},
        "fraud_matrix": _matrix,
    },
    "anyOf": [
        {"required": ["case_id"]},
        {"required": ["true_counts", "gammas", "sigma_gamma_sq", "sigma_sq", "fraud_matrix"]},
    ],
}


def _read_json(path) -> object:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _validate(obj, schema: dict, path) -> None:
    try:
        jsonschema.validate(obj, schema)
    except jsonschema.ValidationError as exc:
        loc = "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in exc.absolute_path)
        raise ConfigError(f"{path}: at $'{loc}': {exc.message}") from None


def load_fraud(path) -> FraudMatrix:
    obj = _read_json(path)
    _validate(obj, FRAUD_SCHEMA, path)
    rows = obj["fraud_matrix"] if isinstance(obj, dict) else obj
    try:
        return FraudMatrix(rows)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_fit_config(path=None) -> tuple[BasisSpec, FitConfig]:
    if path is None:
        return BasisSpec(), FitConfig()
    obj = _read_json(path)
    _validate(obj, FIT_SCHEMA, path)
    try:
        return BasisSpec.from_dict(obj.get("basis", {})), FitConfig.from_dict(obj.get("fit", {}))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def load_scenario(path) -> SimScenario:
    obj = _read_json(path)
    _validate(obj, SCENARIO_SCHEMA, path)
    try:
        return SimScenario.from_dict(obj)
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n")
