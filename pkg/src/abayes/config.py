"""Experiment configuration: YAML loading and schema validation.

A run config is a YAML mapping::

    model: conjugate-gaussian      # see `abayes list-models`
    model_options: {n: 50}         # optional, model-specific
    method: abc-reject             # see `abayes list-methods`
    params: {M: 100000, quantile: 0.001}
    seed: 2026
    output: runs/abc
    n_workers: 1

A compare config replaces ``method``/``params`` with a list of blocks::

    model: stereological
    seed: 1
    output: runs/compare
    budget: 100000                 # shared simulation budget
    reference: bsl-9               # label of the reference block
    methods:
      - {label: abc-9, method: abc-reject, params: {quantile: 0.005}}
      - {label: bsl-9, method: bsl, params: {m: 50}}
"""

from dataclasses import dataclass
from typing import Any

import yaml


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


@dataclass(frozen=True)
class Param:
    kind: str            # int, float, bool, str, floats (list), float_or_list
    default: Any = None
    required: bool = False
    choices: tuple = ()
    help: str = ""


def _coerce(key, spec, value):
    if value is None:
        if spec.required:
            raise ConfigError(f"{key}: a value is required")
        return None
    k = spec.kind
    try:
        if k == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise TypeError
            out = int(value)
        elif k == "float":
            if isinstance(value, bool):
                raise TypeError
            out = float(value)
        elif k == "bool":
            if not isinstance(value, bool):
                raise TypeError
            out = value
        elif k == "str":
            if not isinstance(value, str):
                raise TypeError
            out = value
        elif k == "floats":
            if not isinstance(value, (list, tuple)):
                raise TypeError
            out = [float(v) for v in value]
        elif k == "float_or_list":
            if isinstance(value, (list, tuple)):
                out = [float(v) for v in value]
            elif isinstance(value, bool):
                raise TypeError
            else:
                out = float(value)
        else:
            raise AssertionError(k)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected {k}, got {value!r}") from None
    if spec.choices and out not in spec.choices:
        raise ConfigError(f"{key}: {out!r} is not one of {list(spec.choices)}")
    return out


def validate_block(prefix, schema, block):
    """Check ``block`` against ``schema``; return it with every default filled in."""
    if block is None:
        block = {}
    if not isinstance(block, dict):
        raise ConfigError(f"{prefix}: expected a mapping")
    unknown = sorted(set(block) - set(schema))
    if unknown:
        raise ConfigError(f"{prefix}.{unknown[0]}: unknown key (allowed: {sorted(schema)})")
    out = {}
    for key, spec in schema.items():
        out[key] = _coerce(f"{prefix}.{key}", spec, block.get(key, spec.default))
    return out


def load_yaml(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config: top level must be a mapping")
    return data


RUN_KEYS = {"model", "model_options", "method", "params", "seed", "output", "n_workers"}
COMPARE_KEYS = {"model", "model_options", "methods", "seed", "output", "n_workers", "budget", "reference",
                "curve_points", "tv_bins"}
BLOCK_KEYS = {"label", "method", "params", "model"}


def check_keys(prefix, data, allowed):
    unknown = sorted(set(data) - allowed)
    if unknown:
        key = unknown[0]
        raise ConfigError(f"{prefix}{key}: unknown key (allowed: {sorted(allowed)})")


def require(data, key, kind, prefix=""):
    if key not in data or data[key] is None:
        raise ConfigError(f"{prefix}{key}: missing required key")
    return _coerce(f"{prefix}{key}", Param(kind, required=True), data[key])
