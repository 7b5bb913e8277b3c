"""Deterministic CSV output: '.' decimal, LF newlines, 17 significant digits."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if v == 0.0:
        return "0"
    return "%.17g" % v


def write_csv(path: str | Path, columns: dict, meta: dict | None = None) -> Path:
    """Write equal-length ``columns``; ``meta`` goes first as ``# key=value`` lines."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    cols = [list(np.atleast_1d(columns[n])) if not isinstance(columns[n], list) else columns[n]
            for n in names]
    n = len(cols[0]) if cols else 0
    if any(len(c) != n for c in cols):
        raise ValueError("columns have different lengths")
    with path.open("w", newline="") as fh:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}={fmt(v)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for i in range(n):
            w.writerow([fmt(c[i]) for c in cols])
    return path


def read_csv(path: str | Path) -> tuple[dict, dict]:
    """Inverse of ``write_csv``: (meta, columns as float arrays where possible)."""
    meta, rows = {}, []
    with Path(path).open(newline="") as fh:
        lines = fh.read().split("\n")
    body = []
    for line in lines:
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            meta[k] = v
        elif line:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    rows = list(reader)
    cols = {}
    for j, name in enumerate(header):
        vals = [r[j] for r in rows]
        try:
            cols[name] = np.array([float(v) if v else np.nan for v in vals])
        except ValueError:
            cols[name] = vals
    return meta, cols
