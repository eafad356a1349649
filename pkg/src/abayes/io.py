"""Draws, summary and manifest files."""

import csv
import json
import math

import numpy as np

from .core import WeightedDraws


def _fmt(v):
    return format(float(v), ".17g")


def write_draws(path, draws, with_distance=True):
    """Write ``param_1..param_p,weight,distance`` with 17 significant digits.

    The distance column is left empty when the draws carry no distances or
    ``with_distance`` is false.
    """
    p = draws.dim
    header = [f"param_{j + 1}" for j in range(p)] + ["weight", "distance"]
    dist = draws.distances if with_distance else None
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(draws)):
            row = [_fmt(v) for v in draws.draws[i]] + [_fmt(draws.weights[i])]
            row.append("" if dist is None else _fmt(dist[i]))
            w.writerow(row)


def read_draws(path):
    """Read a draws file back into :class:`WeightedDraws` (weights re-normalized to sum to 1)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    p = len(header) - 2
    if header[p:] != ["weight", "distance"] or any(h != f"param_{j + 1}" for j, h in enumerate(header[:p])):
        raise ValueError(f"{path}: unexpected header {header}")
    X = np.array([[float(v) for v in r[:p]] for r in body]).reshape(len(body), p)
    w = np.array([float(r[p]) for r in body])
    d = [r[p + 1] for r in body]
    dist = None if any(v == "" for v in d) or not d else np.array([float(v) for v in d])
    return WeightedDraws.from_unnormalized(X, w, distances=dist)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def write_curve(path, x, density):
    """Two-column ``x,density`` file."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "density"])
        for a, b in zip(x, density):
            w.writerow([_fmt(a), _fmt(b)])
