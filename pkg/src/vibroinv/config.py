"""JSON run configuration: schema validation and experiment construction."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass

import jsonschema
import numpy as np

from . import helmholtz as hz
from .errors import ConfigError
from .forward import Params, ProblemInstance
from .grid import build_grid
from .io import read_field
from .reconstruct import IterationConfig

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_point = {"oneOf": [_num, {"type": "array", "items": _num, "minItems": 1, "maxItems": 2}]}
_segment = {"oneOf": [{"type": "null"}, _point,
                      {"type": "array", "items": {"type": "array", "items": _num,
                                                  "minItems": 2, "maxItems": 2},
                       "minItems": 2, "maxItems": 2}]}

_field = {
    "type": "object",
    "properties": {
        "type": {"enum": ["constant", "gaussian", "pyramid", "file"]},
        "value": _num,
        "center": {"type": "array", "items": _num, "minItems": 1, "maxItems": 2},
        "width": _pos,
        "amplitude": _num,
        "path": {"type": "string"},
    },
    "required": ["type"],
    "additionalProperties": False,
}

SCHEMA = {
    "type": "object",
    "properties": {
        "grid": {
            "type": "object",
            "properties": {
                "dim": {"enum": [1, 2]},
                "extents": {"oneOf": [_pos, {"type": "array", "items": _pos}]},
                "n": {"oneOf": [{"type": "integer", "minimum": 3},
                                {"type": "array", "items": {"type": "integer", "minimum": 3}}]},
                "sigma1": _segment,
                "sigma2": _segment,
                "gamma": _segment,
                "receivers": {"type": "array", "items": _segment, "minItems": 1},
                "roi": _segment,
            },
            "required": ["dim", "extents", "n"],
            "additionalProperties": False,
        },
        "physics": {
            "type": "object",
            "properties": {
                "kappa0": {"type": "number", "minimum": 0},
                "gamma0": _num,
                "sigma_values": {"oneOf": [{"enum": ["absorbing"]}, {"type": "number", "minimum": 0}]},
                "excitations": {
                    "type": "array", "minItems": 1,
                    "items": {
                        "type": "object",
                        "properties": {
                            "omega1": _pos, "omega2": _pos,
                            "ghat1": {"oneOf": [_num, {"type": "array", "items": _num,
                                                       "minItems": 2, "maxItems": 2}]},
                            "ghat2": {"oneOf": [_num, {"type": "array", "items": _num,
                                                       "minItems": 2, "maxItems": 2}]},
                            "sigma1": _segment, "sigma2": _segment,
                        },
                        "required": ["omega1", "omega2"],
                        "additionalProperties": False,
                    },
                },
            },
            "required": ["excitations"],
            "additionalProperties": False,
        },
        "truth": {
            "type": "object",
            "properties": {"kappa": _field, "gamma": _field},
            "additionalProperties": False,
        },
        "noise": {
            "type": "object",
            "properties": {
                "delta": {"type": "number", "minimum": 0},
                "seed": {"type": "integer", "minimum": 0},
                "fine_grid": {"type": "boolean"},
            },
            "additionalProperties": False,
        },
        "method": {
            "type": "object",
            "properties": {
                "method": {"enum": ["irgnm", "lm", "aao_newton", "landweber"]},
                "alpha0": _pos,
                "rho": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "lm_theta_lower": _pos, "lm_theta_upper": _pos,
                "landweber_mu": _pos,
                "tau": {"type": "number", "exclusiveMinimum": 1},
                "max_iters": {"type": "integer", "minimum": 0},
                "kaczmarz": {"enum": ["none", "parallel", "sequential"]},
                "kaczmarz_order": {"enum": ["cyclic", "randomized"]},
                "seed": {"type": "integer", "minimum": 0},
                "basis": {"enum": ["nodal", "patch", "hat"]},
                "patches": {"oneOf": [{"type": "integer", "minimum": 1},
                                      {"type": "array", "items": {"type": "integer", "minimum": 1}}]},
                "unknowns": {"enum": ["both", "kappa", "gamma"]},
                "aao_variant": {"enum": ["irgnm", "lm"]},
                "backend": {"enum": ["banded", "superlu", "bicgstab"]},
            },
            "additionalProperties": False,
        },
        "modal": {
            "type": "object",
            "properties": {
                "n_modes": {"type": "integer", "minimum": 1},
                "eps0": _pos,
                "omega2": _pos,
                "n_background": {"type": "integer", "minimum": 5},
                "b_left": _num, "b_right": _num,
                "truth_mode": {"type": "integer", "minimum": 0},
                "b_min": {"type": "number", "minimum": 0},
            },
            "additionalProperties": False,
        },
        "output": {
            "type": "object",
            "properties": {"directory": {"type": "string"}},
            "additionalProperties": False,
        },
    },
    "required": ["grid"],
    "additionalProperties": False,
}


def validate(doc):
    """Raise :class:`ConfigError` naming the offending field."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(doc), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        where = "/".join(str(p) for p in e.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {e.message}")
    return doc


def load(path):
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate(doc)


def _complex(v, default=1.0):
    if v is None:
        return complex(default)
    if isinstance(v, (list, tuple)):
        return complex(v[0], v[1])
    return complex(v)


def field_values(spec, coords, base_dir="."):
    """Evaluate a truth field spec at ``coords`` (rows = nodes)."""
    if spec is None:
        return np.zeros(coords.shape[0])
    kind = spec["type"]
    if kind == "constant":
        return np.full(coords.shape[0], float(spec.get("value", 0.0)))
    if kind == "file":
        path = spec["path"]
        if not os.path.isabs(path):
            path = os.path.join(base_dir, path)
        vals = read_field(path)
        if vals.size != coords.shape[0]:
            raise ConfigError(f"{path}: expected {coords.shape[0]} values, got {vals.size}")
        return vals
    try:
        center = np.asarray(spec["center"], dtype=float)
        width = float(spec["width"])
        amp = float(spec["amplitude"])
    except KeyError as exc:
        raise ConfigError(f"truth field {kind} needs {exc.args[0]}") from exc
    if center.size != coords.shape[1]:
        raise ConfigError("truth center has the wrong dimension")
    if kind == "gaussian":
        r2 = np.sum((coords - center) ** 2, axis=1)
        return amp * np.exp(-r2 / (2 * width**2))
    # tensor pyramid with half-width ``width``
    return amp * np.prod(np.maximum(0.0, 1.0 - np.abs(coords - center) / width), axis=1)


@dataclass(eq=False)
class Experiment:
    grid: object
    instances: list
    truth: Params | None
    iteration: IterationConfig
    doc: dict
    backend: str | None = None


def _grid_from(doc, sigma1="keep", sigma2="keep", gamma="keep"):
    g = doc["grid"]
    spec = {
        "sigma1": g.get("sigma1"), "sigma2": g.get("sigma2"),
        "gamma": g.get("gamma"), "roi": g.get("roi"),
    }
    for name, val in (("sigma1", sigma1), ("sigma2", sigma2), ("gamma", gamma)):
        if not (isinstance(val, str) and val == "keep"):
            spec[name] = val
    return build_grid(g["dim"], g["extents"], g["n"], spec["sigma1"], spec["sigma2"],
                      spec["gamma"], spec["roi"])


def build_instances(doc, n_override=None):
    """Instances ``p = (m - 1) L + ell`` over excitations ``ell`` and receivers ``m``."""
    if n_override is not None:
        doc = dict(doc, grid=dict(doc["grid"], n=n_override))
    phys = doc.get("physics")
    if phys is None:
        raise ConfigError("config field physics: required for this command")
    receivers = doc["grid"].get("receivers") or [doc["grid"].get("gamma")]
    kappa0 = float(phys.get("kappa0", 1.0))
    gamma0 = float(phys.get("gamma0", 1.0))
    sig = phys.get("sigma_values", "absorbing")
    out = []
    try:
        for m, rec in enumerate(receivers, start=1):
            for ell, ex in enumerate(phys["excitations"], start=1):
                g = _grid_from(doc, ex.get("sigma1", "keep"), ex.get("sigma2", "keep"), rec)
                w1, w2 = float(ex["omega1"]), float(ex["omega2"])
                if sig == "absorbing":
                    imp = hz.ImpedanceSet.absorbing(g, w1, w2, kappa0)
                else:
                    imp = hz.ImpedanceSet.uniform(g, float(sig))
                out.append(ProblemInstance(
                    g, imp, hz.Excitation(w1, _complex(ex.get("ghat1"))),
                    hz.Excitation(w2, _complex(ex.get("ghat2"))), kappa0, gamma0, ell, m))
    except ValueError as exc:
        raise ConfigError(f"config field physics/excitations: {exc}") from exc
    return out


def iteration_config(doc, seed=None):
    m = dict(doc.get("method", {}))
    m.pop("backend", None)
    if seed is not None:
        m["seed"] = seed
    if isinstance(m.get("patches"), list):
        m["patches"] = tuple(m["patches"])
    try:
        return IterationConfig(**m)
    except ValueError as exc:
        raise ConfigError(f"config field method: {exc}") from exc


def truth_params(doc, grid, base_dir="."):
    t = doc.get("truth")
    if t is None:
        return None
    coords = grid.coords[grid.roi_nodes]
    return Params(field_values(t.get("kappa"), coords, base_dir),
                  field_values(t.get("gamma"), coords, base_dir))


def build_experiment(doc, base_dir=".", seed=None):
    instances = build_instances(doc)
    grid = instances[0].grid
    return Experiment(grid=grid, instances=instances,
                      truth=truth_params(doc, grid, base_dir),
                      iteration=iteration_config(doc, seed), doc=doc,
                      backend=doc.get("method", {}).get("backend"))
