"""CSV / JSON writers and readers for solver outputs.

Numbers are written with ``repr``, the shortest decimal that round-trips,
so reloading a matrix gives back the same doubles bit for bit.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np


def _num(v):
    return repr(float(v))


def write_matrix(path, t_grid, x_grid, A):
    """Header row ``t, x_0, ..., x_M``; then one row per time index, ``t_i`` first."""
    A = np.asarray(A)
    as_int = A.dtype == bool
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [_num(x) for x in x_grid])
        for t, row in zip(t_grid, A):
            w.writerow([_num(t)] + ([str(int(v)) for v in row] if as_int else [_num(v) for v in row]))


def read_matrix(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][0] != "t":
        raise ValueError(f"{path}: missing header row")
    x = np.array([float(v) for v in rows[0][1:]])
    t = np.array([float(r[0]) for r in rows[1:]])
    A = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return t, x, A


def write_boundary(path, boundary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "interval_low", "interval_high"])
        for t, lo, hi in boundary.to_rows():
            w.writerow([_num(t), _num(lo), _num(hi)])


def read_boundary(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))[1:]
    return [(float(a), float(b), float(c)) for a, b, c in rows]


def write_volterra_boundary(path, sol):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "b_gain", "b_y", "b_x"])
        for s, _t, bg, by, bx in sol.rows():
            w.writerow([_num(s), _num(bg), _num(by), _num(bx)])


def write_convergence_log(path, sol):
    with open(path, "w") as fh:
        # residual = sup |RHS(b) - b| before the step, update = sup change of the iterate
        fh.write("iteration,residual,update\n")
        for k, (r, u) in enumerate(zip(sol.defects, sol.history), 1):
            fh.write(f"{k},{_num(r)},{_num(u)}\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        # JSON has no inf/nan
        return f if math.isfinite(f) else str(f)
    return obj


def write_json(path, data):
    Path(path).write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")


def read_json(path):
    return json.loads(Path(path).read_text())
