"""Run configuration: one strict JSON document with up to two scalar parameters.

Matrix entries and ``h`` may be numbers or arithmetic expressions in the
declared parameters, e.g. ``"-k1 / (2 * 0.05)"``.
"""
from __future__ import annotations

import ast
import itertools
import json
import math
import operator
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

from .criterion import Numerics
from .model import DelaySystem, validate_system


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


_entry = {"type": ["number", "string"]}
_matrix = {"oneOf": [_entry, {"type": "array", "minItems": 1,
                              "items": {"type": "array", "minItems": 1, "items": _entry}}]}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["system"],
    "properties": {
        "name": {"type": "string"},
        "system": {
            "type": "object",
            "additionalProperties": False,
            "required": ["A", "G", "h"],
            "properties": {
                "A": {"type": "array", "minItems": 2, "items": _matrix},
                "G": {"type": "array", "minItems": 1, "items": _matrix},
                "h": _entry,
                "W": _matrix,
                "eta": {"type": "number", "exclusiveMinimum": 1},
            },
        },
        "parameters": {
            "type": "object",
            "maxProperties": 2,
            "propertyNames": {"pattern": "^[A-Za-z_][A-Za-z0-9_]*$"},
            "additionalProperties": {
                "oneOf": [
                    {"type": "number"},
                    {
                        "type": "object",
                        "additionalProperties": False,
                        "required": ["min", "max", "count"],
                        "properties": {
                            "min": {"type": "number"},
                            "max": {"type": "number"},
                            "count": {"type": "integer", "minimum": 1},
                        },
                    },
                ]
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "N": {"type": "integer", "minimum": 4},
                "P": {"type": "integer", "minimum": 8},
                "pd_tol": {"type": "number", "exclusiveMinimum": 0},
                "alpha0_fraction": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                "oracle": {"type": "boolean"},
                "witness": {"type": "boolean"},
                "subgrid": {"type": "boolean"},
                "max_dense": {"type": "integer", "minimum": 2},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "format": {"enum": ["json", "csv"]},
            },
        },
    },
}

# --- safe expressions ------------------------------------------------------

_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
           ast.Div: operator.truediv, ast.Pow: operator.pow}
_UNOPS = {ast.UAdd: operator.pos, ast.USub: operator.neg}
_FUNCS = {"sqrt": math.sqrt, "exp": math.exp, "sin": math.sin, "cos": math.cos, "abs": abs}
_CONSTS = {"pi": math.pi, "e": math.e}


def expression_names(expr: str) -> set:
    tree = ast.parse(expr, mode="eval")
    return {n.id for n in ast.walk(tree) if isinstance(n, ast.Name)} - set(_FUNCS) - set(_CONSTS)


def safe_eval(expr: str, env: dict) -> float:
    """Evaluate an arithmetic expression over numbers, parameters and a few functions."""

    def ev(node):
        if isinstance(node, ast.Expression):
            return ev(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return float(node.value)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return _BINOPS[type(node.op)](ev(node.left), ev(node.right))
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UNOPS:
            return _UNOPS[type(node.op)](ev(node.operand))
        if isinstance(node, ast.Name):
            if node.id in env:
                return float(env[node.id])
            if node.id in _CONSTS:
                return _CONSTS[node.id]
            raise ValueError(f"unknown name {node.id!r}")
        if (isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS
                and len(node.args) == 1 and not node.keywords):
            return float(_FUNCS[node.func.id](ev(node.args[0])))
        raise ValueError(f"unsupported syntax in {expr!r}")

    return ev(ast.parse(expr, mode="eval"))


# --- configuration ---------------------------------------------------------


@dataclass(frozen=True)
class ParamGrid:
    name: str
    values: tuple

    @property
    def count(self) -> int:
        return len(self.values)


@dataclass
class RunConfig:
    template: dict
    params: list = field(default_factory=list)  # ParamGrid, in declaration order
    numerics: Numerics = field(default_factory=Numerics)
    out_dir: str = "."
    fmt: str = "json"
    name: str = ""

    @property
    def free_parameters(self) -> list:
        return [p.name for p in self.params if p.count > 1]

    @property
    def n_points(self) -> int:
        return math.prod(p.count for p in self.params)

    def points(self) -> list:
        """Parameter assignments in row-major order (last parameter fastest)."""
        names = [p.name for p in self.params]
        return [dict(zip(names, vals)) for vals in itertools.product(*(p.values for p in self.params))]

    def instantiate(self, values: dict | None = None) -> DelaySystem:
        env = dict(values or {})
        if not env and self.params:
            if self.free_parameters:
                raise ValueError(f"parameters {self.free_parameters} are swept; pick a point")
            env = self.points()[0]

        def conv(x):
            if isinstance(x, str):
                return safe_eval(x, env)
            if isinstance(x, list):
                return [conv(v) for v in x]
            return x

        raw = {k: conv(v) for k, v in self.template.items()}
        return validate_system(raw)


def _walk_strings(x):
    if isinstance(x, str):
        yield x
    elif isinstance(x, list):
        for v in x:
            yield from _walk_strings(v)


def config_from_dict(doc: dict) -> RunConfig:
    validator = jsonschema.Draft202012Validator(CONFIG_SCHEMA)
    errs = sorted(validator.iter_errors(doc), key=lambda e: [str(x) for x in e.absolute_path])
    if errs:
        raise ConfigError([f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errs])

    errors = []
    params = []
    for name, entry in doc.get("parameters", {}).items():
        if name in _CONSTS or name in _FUNCS:
            errors.append(f"parameters/{name}: name is reserved")
            continue
        if isinstance(entry, dict):
            if entry["max"] < entry["min"]:
                errors.append(f"parameters/{name}: max < min")
                continue
            vals = np.linspace(entry["min"], entry["max"], entry["count"])
            params.append(ParamGrid(name, tuple(float(v) for v in vals)))
        else:
            params.append(ParamGrid(name, (float(entry),)))

    system = doc["system"]
    declared = {p.name for p in params}
    used = set()
    for key in ("A", "G", "h", "W"):
        for s in _walk_strings(system.get(key)):
            try:
                names = expression_names(s)
            except SyntaxError:
                errors.append(f"system/{key}: cannot parse expression {s!r}")
                continue
            unknown = names - declared
            if unknown:
                errors.append(f"system/{key}: expression {s!r} uses undeclared {sorted(unknown)}")
            used |= names
    for name in sorted(declared - used):
        errors.append(f"parameters/{name}: does not appear in the system")
    if errors:
        raise ConfigError(errors)

    nd = doc.get("numerics", {})
    numerics = Numerics(**nd)
    out = doc.get("output", {})
    cfg = RunConfig(template=system, params=params, numerics=numerics,
                    out_dir=out.get("dir", "."), fmt=out.get("format", "json"), name=doc.get("name", ""))
    # surface matrix/shape problems now rather than at the first sweep point
    try:
        cfg.instantiate(cfg.points()[0])
    except Exception as exc:  # noqa: BLE001
        raise ConfigError([f"system: {exc}"]) from exc
    return cfg


def parse_config(path) -> RunConfig:
    """Read and validate a JSON run configuration; unknown keys are rejected."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"]) from exc
    return config_from_dict(doc)
