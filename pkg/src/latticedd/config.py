"""Case configuration: JSON documents validated against a JSON Schema."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

import jsonschema

from .errors import ParseError, ValidationError

SCHEMA_VERSION = 1

_vec = {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 3}
_mat = {"type": "array", "items": _vec, "minItems": 2, "maxItems": 3}
_face = {"enum": ["xmin", "xmax", "ymin", "ymax", "zmin", "zmax"]}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["macro", "cells", "cell", "bcs"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "description": {"type": "string"},
        "macro": {
            "type": "object",
            "required": ["kind"],
            "properties": {"kind": {"enum": ["affine-box", "quarter-annulus", "bezier-grid"]}},
            "allOf": [
                {"if": {"properties": {"kind": {"const": "affine-box"}}},
                 "then": {"additionalProperties": False,
                          "properties": {"kind": {}, "origin": _vec, "lengths": _vec,
                                         "cell_size": _vec},
                          "oneOf": [{"required": ["lengths"]}, {"required": ["cell_size"]}]}},
                {"if": {"properties": {"kind": {"const": "quarter-annulus"}}},
                 "then": {"additionalProperties": False,
                          "required": ["inner_radius", "outer_radius"],
                          "properties": {"kind": {},
                                         "inner_radius": {"type": "number", "exclusiveMinimum": 0},
                                         "outer_radius": {"type": "number", "exclusiveMinimum": 0},
                                         "height": {"type": "number", "exclusiveMinimum": 0}}}},
                {"if": {"properties": {"kind": {"const": "bezier-grid"}}},
                 "then": {"additionalProperties": False,
                          "required": ["degree", "elements", "control_points"],
                          "properties": {"kind": {},
                                         "degree": {"type": "array",
                                                    "items": {"type": "integer", "minimum": 1,
                                                              "maximum": 2}},
                                         "elements": {"type": "array",
                                                      "items": {"type": "integer", "minimum": 1}},
                                         "control_points": {"type": "array"},
                                         "weights": {"type": "array"}}}},
            ],
        },
        "cells": {"type": "array", "items": {"type": "integer", "minimum": 1},
                  "minItems": 2, "maxItems": 3},
        "cell": {
            "type": "object",
            "additionalProperties": False,
            "required": ["pattern"],
            "properties": {
                "pattern": {"enum": ["solid2d", "cross-hollow-square2d", "plus2d", "solid3d",
                                     "bcc3d"]},
                "degree": {"enum": [1, 2], "default": 1},
                "refinement": {"type": "integer", "minimum": 0, "default": 0},
                "strut_thickness": {"type": "number", "exclusiveMinimum": 0,
                                    "exclusiveMaximum": 1, "default": 0.25},
            },
        },
        "material": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "E": {"type": "number", "exclusiveMinimum": 0, "default": 5000.0},
                "nu": {"type": "number", "exclusiveMinimum": -1, "exclusiveMaximum": 0.5,
                       "default": 0.4},
            },
        },
        "bcs": {
            "type": "object",
            "additionalProperties": False,
            "required": ["dirichlet"],
            "properties": {
                "dirichlet": {
                    "type": "array", "minItems": 1,
                    "items": {"type": "object", "additionalProperties": False,
                              "required": ["face"],
                              "properties": {"face": _face, "value": _vec, "gradient": _mat,
                                             "components": {"type": "array",
                                                            "items": {"type": "boolean"}}}},
                },
                "neumann": {
                    "type": "array",
                    "items": {"type": "object", "additionalProperties": False,
                              "required": ["face", "traction"],
                              "properties": {"face": _face, "traction": _vec}},
                },
                "body_force": {"oneOf": [_vec, {"type": "null"}]},
            },
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mode": {"enum": ["direct", "fetidp", "rom-ifetidp"], "default": "rom-ifetidp"},
                "tol_gmres": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1,
                              "default": 1e-5},
                "tol_cg": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1,
                           "default": 1e-11},
                "tol_rb": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1,
                           "default": 1e-6},
                "fit_degree": {"type": "integer", "minimum": 0, "default": 2},
                "max_outer": {"type": "integer", "minimum": 1, "default": 200},
                "max_inner": {"type": "integer", "minimum": 1, "default": 500},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "report": {"type": ["string", "null"], "default": None},
                "field": {"type": ["string", "null"], "default": None},
            },
        },
    },
}

_DEFAULT_SECTIONS = ("material", "solver", "output")


def _apply_defaults(cfg: dict) -> dict:
    cfg = copy.deepcopy(cfg)
    cfg.setdefault("schema_version", SCHEMA_VERSION)
    props = SCHEMA["properties"]
    for section in _DEFAULT_SECTIONS + ("cell",):
        sec = cfg.setdefault(section, {})
        for key, spec in props[section]["properties"].items():
            if "default" in spec and key not in sec:
                sec[key] = spec["default"]
    bcs = cfg["bcs"]
    bcs.setdefault("neumann", [])
    bcs.setdefault("body_force", None)
    return cfg


def validate_config(cfg: dict) -> dict:
    """Validate, check cross-field rules and fill defaults."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: (len(e.path), list(map(str, e.path))))
    if errors:
        e = errors[0]
        raise ValidationError(e.message, e.path)
    cfg = _apply_defaults(cfg)
    d = len(cfg["cells"])
    pattern_dim = 3 if cfg["cell"]["pattern"].endswith("3d") else 2
    if pattern_dim != d:
        raise ValidationError(f"pattern {cfg['cell']['pattern']!r} is {pattern_dim}D but cells has "
                              f"{d} entries", ("cell", "pattern"))
    for k, bc in enumerate(cfg["bcs"]["dirichlet"]):
        if d == 2 and bc["face"] in ("zmin", "zmax"):
            raise ValidationError("face does not exist in 2D", ("bcs", "dirichlet", k, "face"))
        for key in ("value", "components"):
            if key in bc and len(bc[key]) != d:
                raise ValidationError(f"expected {d} entries", ("bcs", "dirichlet", k, key))
    for k, bc in enumerate(cfg["bcs"]["neumann"]):
        if len(bc["traction"]) != d:
            raise ValidationError(f"expected {d} entries", ("bcs", "neumann", k, "traction"))
    macro = cfg["macro"]
    for key in ("origin", "lengths", "cell_size"):
        if key in macro and len(macro[key]) != d:
            raise ValidationError(f"expected {d} entries", ("macro", key))
    return cfg


def load_config(path) -> dict:
    """Read and validate a JSON case file."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ParseError(f"cannot read {path}: {e}") from e
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e}") from e
    if not isinstance(cfg, dict):
        raise ValidationError("top level must be an object")
    return validate_config(cfg)


def bundled_cases() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("latticedd.cases").iterdir()
                  if p.name.endswith(".json"))


def bundled_case(name: str, **overrides) -> dict:
    """Load a bundled case; ``cells`` and solver keys may be overridden."""
    path = resources.files("latticedd.cases") / f"{name}.json"
    if not path.is_file():
        raise ValidationError(f"unknown bundled case {name!r}; available: {bundled_cases()}")
    cfg = json.loads(path.read_text())
    if "cells" in overrides:
        cfg["cells"] = list(overrides.pop("cells"))
    if overrides:
        cfg.setdefault("solver", {}).update(overrides)
    return validate_config(cfg)
