"""Experiment configuration: defaults, schema validation and the resolved config."""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

import jsonschema

from .estimate_harness import REGISTRY
from .metric_models import MODEL_IDS

STAGES = ("check-metric", "geodesics", "solve", "norms", "verify", "decay", "report")


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "model": {"id": "minkowski", "delta": None, "gamma": None, "C_tau": 10.0, "amplitude": None,
              "mass": None, "core": [3.0, 6.0], "table": None},
    "chart": {"blend": False, "blend_lo": 0.02, "blend_hi": 0.04},
    "solver": {"t_end": 50.0, "dr": 0.1, "cfl": 0.5, "modes": [0],
               "data": {"center": 3.0, "width": 1.0, "amplitude": 1.0, "amplitude_t": 0.0}},
    "probe": {"r_obs": [2.0], "u0": [-3.0], "snapshot_dt": 1.0, "record_every": 1},
    "geodesics": {"R0": [5.0, 10.0], "count": 64, "tol": 1e-8},
    "norms": {"kinds": ["LE", "S"], "fixed_kinds": ["CE", "L2grad"], "t_ref": 1.0},
    "registry": {"ids": ["stokes_identity", "hardy0"], "count": None, "refinement_levels": 3},
    "decay": {"window": None, "channels": ["interior", "cone"], "floor": 1e-6, "tol": 0.1},
    "elliptic": {"a": [-0.25, 0.5, 1.25], "sweep_a": 2.5, "count": 16, "k_terms": 10},
    "stages": {s: True for s in STAGES},
    "seed": 42,
    "jobs": 1,
    "out": "radiant-out",
}

_num = {"type": "number"}
_opt_num = {"type": ["number", "null"]}
_num_list = {"type": "array", "items": _num}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "additionalProperties": False, "required": list(required)}


SCHEMA: dict = _obj({
    "model": _obj({"id": {"enum": list(MODEL_IDS)}, "delta": _opt_num, "gamma": _opt_num,
                   "C_tau": _num, "amplitude": _opt_num, "mass": _opt_num,
                   "core": {"type": "array", "items": _num, "minItems": 2, "maxItems": 2},
                   "table": {"type": ["string", "null"]}}),
    "chart": _obj({"blend": {"type": "boolean"}, "blend_lo": _num, "blend_hi": _num}),
    "solver": _obj({"t_end": {"type": "number", "exclusiveMinimum": 0},
                    "dr": {"type": "number", "exclusiveMinimum": 0},
                    "cfl": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                    "modes": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
                    "data": _obj({"center": _num, "width": {"type": "number", "exclusiveMinimum": 0},
                                  "amplitude": _num, "amplitude_t": _num})}),
    "probe": _obj({"r_obs": _num_list, "u0": _num_list,
                   "snapshot_dt": {"type": "number", "exclusiveMinimum": 0},
                   "record_every": {"type": "integer", "minimum": 1}}),
    "geodesics": _obj({"R0": _num_list, "count": {"type": "integer", "minimum": 1},
                       "tol": {"type": "number", "exclusiveMinimum": 0}}),
    "norms": _obj({"kinds": {"type": "array", "items": {"type": "string"}},
                   "fixed_kinds": {"type": "array", "items": {"type": "string"}}, "t_ref": _num}),
    "registry": _obj({"ids": {"oneOf": [{"const": "all"},
                                        {"type": "array", "items": {"enum": list(REGISTRY)}}]},
                      "count": {"type": ["integer", "null"], "minimum": 1},
                      "refinement_levels": {"type": "integer", "minimum": 3}}),
    "decay": _obj({"window": {"oneOf": [{"type": "null"},
                                        {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}]},
                   "channels": {"type": "array", "items": {"enum": ["interior", "cone"]}},
                   "floor": _num, "tol": _num}),
    "elliptic": _obj({"a": _num_list, "sweep_a": _num, "count": {"type": "integer", "minimum": 1},
                      "k_terms": {"type": "integer", "minimum": 1}}),
    "stages": _obj({s: {"type": "boolean"} for s in STAGES}),
    "seed": {"type": "integer", "minimum": 0},
    "jobs": {"type": "integer", "minimum": 1},
    "out": {"type": "string"},
})


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _field_name(err: jsonschema.ValidationError) -> str:
    path = ".".join(str(p) for p in err.absolute_path)
    if err.validator == "additionalProperties":
        extra = sorted(set(err.instance) - set(err.schema.get("properties", {})))
        return ".".join(filter(None, [path, extra[0] if extra else ""]))
    return path or "<root>"


def resolve(raw: dict | None = None) -> dict:
    """Validate a user config and return it with every default explicit.

    Model profile defaults depend on the model id and are filled in here, so
    the resolved config fully determines the run.
    """
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    try:
        jsonschema.validate(raw, SCHEMA)
    except jsonschema.ValidationError as err:
        raise ConfigError(f"{_field_name(err)}: {err.message}") from None
    cfg = _merge(DEFAULTS, raw)
    jsonschema.validate(cfg, SCHEMA)
    m = cfg["model"]
    radiating = m["id"] == "radiating"
    if m["delta"] is None:
        m["delta"] = 0.5 if radiating else 1.0
    if m["gamma"] is None:
        m["gamma"] = 0.25 if radiating else 0.5
    if m["amplitude"] is None:
        m["amplitude"] = 0.1 if radiating else 0.0
    if m["mass"] is None and m["id"] == "schwarzschild_tail":
        m["mass"] = m["amplitude"] if m["amplitude"] > 0 else 1.0
    if not m["delta"] > 0:
        raise ConfigError("model.delta: must be positive")
    if not 0 < m["gamma"] < m["delta"]:
        raise ConfigError(f"model.gamma: must satisfy 0 < gamma < delta (gamma = {m['gamma']}, delta = {m['delta']})")
    if not m["C_tau"] > 1:
        raise ConfigError("model.C_tau: must exceed 1")
    if m["id"] == "custom-table" and not m["table"]:
        raise ConfigError("model.table: required for custom-table")
    w = cfg["decay"]["window"]
    if w is not None and not 0 < w[0] < w[1]:
        raise ConfigError("decay.window: must satisfy 0 < t_a < t_b")
    return cfg


def load(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return raw


def canonical(cfg: dict) -> str:
    return json.dumps(cfg, sort_keys=True, separators=(",", ":"))


def config_hash(cfg: dict) -> str:
    """Hash of everything that affects results (the output path and worker count do not)."""
    core = {k: v for k, v in cfg.items() if k not in ("out", "jobs")}
    return hashlib.sha256(canonical(core).encode()).hexdigest()
