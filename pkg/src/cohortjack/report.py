"""JSON report layout shared by the command-line tools."""

from __future__ import annotations

import json

import jsonschema

SCHEMA_VERSION = "1.0"

_number = {"type": "number"}
_nullable_number = {"type": ["number", "null"]}

_inference = {
    "type": "object",
    "required": ["method", "estimate", "se", "statistic", "reference", "df", "p_value", "ci",
                 "alpha", "degenerate"],
    "properties": {
        "method": {"enum": ["asymptotic", "multiplier_bootstrap", "jackknife_cv3"]},
        "estimate": _number,
        "se": {"type": "number", "minimum": 0},
        "statistic": _nullable_number,
        "reference": {"enum": ["standard_normal", "student_t"]},
        "df": {"type": ["integer", "null"]},
        "p_value": {"type": "number", "minimum": 0, "maximum": 1},
        "ci": {"type": "array", "items": _number, "minItems": 2, "maxItems": 2},
        "alpha": _number,
        "degenerate": {"type": "boolean"},
        "jackknife": {
            "type": "object",
            "required": ["H", "clusters"],
            "properties": {
                "H": {"type": "integer", "minimum": 2},
                "clusters": {"type": "array", "items": {
                    "type": "object",
                    "required": ["cluster", "loo_estimate", "size", "dropped_cells"],
                }},
            },
        },
        "bootstrap": {
            "type": "object",
            "required": ["B", "seed", "weight_law", "draws"],
        },
    },
}

REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "command"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "command": {"enum": ["estimate", "jackknife", "bootstrap", "diagnose", "simulate"]},
        "control_mode": {"enum": ["never_treated", "not_yet_treated"]},
        "scheme": {"enum": ["simple", "group", "calendar"]},
        "cells": {"type": "array", "items": {
            "type": "object",
            "required": ["g", "t", "att", "n_treated", "n_comparison", "comparison"],
            "properties": {
                "g": {"type": "integer"},
                "t": {"type": "integer"},
                "att": _number,
                "n_treated": {"type": "integer", "minimum": 1},
                "n_comparison": {"type": "integer", "minimum": 1},
                "comparison": {"type": "array", "items": {"type": "string"}},
            },
        }},
        "omitted_cells": {"type": "array"},
        "att": {
            "type": "object",
            "required": ["value", "weights"],
            "properties": {"value": _number, "weights": {"type": "array"}},
        },
        "inference": {"type": "array", "items": _inference},
        "loo_profile": {"type": "array", "items": {
            "type": "object",
            "required": ["cluster", "size", "role", "loo_estimate", "shift", "flagged"],
        }},
        "rejection_table": {"type": "array"},
    },
}


def validate_report(doc) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match the report layout."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    jsonschema.validate(doc, REPORT_SCHEMA)


def dumps(doc) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"
