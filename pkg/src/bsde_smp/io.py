"""Deterministic, atomically written CSV and JSON artifacts.

Every artifact carries a ``meta`` block with the seed, grid size, path
count, basis degree, ridge setting and package version, enough to replay
the run. CSV files put it on a leading ``#`` comment line.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np

from .solver import RegressionConfig

__version__ = "0.1.0"


def run_meta(seed: int, N: int, M: int, config: RegressionConfig, **extra) -> dict:
    meta = {"seed": int(seed), "N": int(N), "M": int(M), "D": int(config.degree),
            "lambda": "auto" if config.ridge is None else float(config.ridge),
            "version": __version__}
    meta.update(extra)
    return meta


def plain(obj):
    """Recursively convert numpy scalars/arrays and non-finite floats into
    JSON-safe builtins (non-finite floats become the strings "inf", "-inf",
    "nan")."""
    if isinstance(obj, dict):
        return {str(k): plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        if math.isfinite(x):
            return x
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    return obj


def atomic_write(path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def dumps(obj) -> str:
    return json.dumps(plain(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, payload: dict, meta: dict) -> Path:
    body = dict(payload)
    body["meta"] = meta
    return atomic_write(path, dumps(body))


def _cell(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return str(int(x))
    return x


def csv_text(header, rows, meta: dict) -> str:
    buf = io.StringIO()
    buf.write("# " + json.dumps(plain(meta), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def write_csv(path, header, rows, meta: dict) -> Path:
    return atomic_write(path, csv_text(header, rows, meta))


def read_csv(path):
    """Return ``(meta, header, rows)`` with numeric cells parsed as floats."""
    with open(path, newline="") as fh:
        first = fh.readline()
        meta = json.loads(first[2:]) if first.startswith("# ") else {}
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(c) for c in r] for r in reader]
    return meta, header, rows


def trajectory_rows(traj, paths: int):
    """CSV rows ``(path, i, t, W_1.., y_1.., z_11.., u_1..)`` for the first
    ``paths`` paths; controls at node N repeat node N-1."""
    grid = traj.grid
    M, n = traj.y.shape[0], traj.y.shape[2]
    d, k = traj.z.shape[3], traj.controls.shape[2]
    header = (["path", "i", "t"] + [f"W_{j + 1}" for j in range(d)]
              + [f"y_{j + 1}" for j in range(n)]
              + [f"z_{a + 1}{b + 1}" for a in range(n) for b in range(d)]
              + [f"u_{j + 1}" for j in range(k)])
    rows = []
    for m in range(min(paths, M)):
        for i in range(grid.N + 1):
            u = traj.controls[m, min(i, grid.N - 1)]
            rows.append([m, i, float(grid.nodes[i]), *traj.bundle.W[m, i].tolist(),
                         *traj.y[m, i].tolist(), *traj.z[m, i].ravel().tolist(), *u.tolist()])
    return header, rows


def adjoint_rows(adj, paths: int):
    grid = adj.grid
    M, n = adj.p.shape[0], adj.p.shape[2]
    header = ["path", "i", "t"] + [f"p_{j + 1}" for j in range(n)]
    rows = [[m, i, float(grid.nodes[i]), *adj.p[m, i].tolist()]
            for m in range(min(paths, M)) for i in range(grid.N + 1)]
    return header, rows
