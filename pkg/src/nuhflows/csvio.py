"""Plot-ready CSV outputs with fixed schemas.

Floats are written with 17 significant digits so that a value read back is
the same double; the same inputs always give byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import math
from pathlib import Path

import numpy as np

from .errors import NuhflowsError

# column name -> kind ("f" float, "i" int, "s" string, "b" bool)
SCHEMAS = {
    "trajectory": [("event_index", "i"), ("component", "i"), ("r", "f"), ("phi", "f"), ("flight_time", "f")],
    "spectrum": [("s_re", "f"), ("s_im", "f"), ("lambda_re", "f"), ("lambda_im", "f"), ("residual", "f")],
    "defect": [("b", "f"), ("xi", "f"), ("n", "i"), ("defect", "f"), ("psi", "f")],
    "periods": [("word", "s"), ("p", "i"), ("T", "f")],
    # y1, y4 are the unstable coordinates; z1, z4 the stable ones
    "tdf": [("y1", "f"), ("y4", "f"), ("D", "f"), ("remainder_bound", "f"), ("z1", "f"), ("z4", "f")],
    "correlation": [("t", "f"), ("rho", "f"), ("se", "f"), ("n_samples", "i")],
    "tail": [("t", "f"), ("survival", "f"), ("se", "f")],
    "variance": [("t", "f"), ("var", "f"), ("se", "f")],
    "laplace": [("s_re", "f"), ("s_im", "f"), ("rho_hat_re", "f"), ("rho_hat_im", "f"), ("n_max", "i"),
                ("tail_bound", "f")],
    "chi": [("ybar", "f"), ("z", "f"), ("chi", "f"), ("tilde_phi", "f"), ("bound", "f")],
    "inequality": [("i", "i"), ("n", "i"), ("t", "f"), ("lhs", "f"), ("rhs", "f"), ("se", "f"), ("holds", "b")],
}


class SchemaError(NuhflowsError):
    pass


def _fmt(x, kind):
    if kind == "f":
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return f"{x:.17g}"
    if kind == "i":
        return str(int(x))
    if kind == "b":
        return "1" if bool(x) else "0"
    return str(x)


def write_csv(path, schema: str, columns: dict):
    """Write equal-length columns under the named schema; returns the row count."""
    spec = SCHEMAS[schema]
    names = [c for c, _ in spec]
    missing = [c for c in names if c not in columns]
    if missing:
        raise SchemaError(f"{schema}: missing columns {missing}")
    extra = set(columns) - set(names)
    if extra:
        raise SchemaError(f"{schema}: unknown columns {sorted(extra)}")
    cols = [list(np.atleast_1d(columns[c])) if not isinstance(columns[c], list) else columns[c] for c in names]
    n = {len(c) for c in cols}
    if len(n) != 1:
        raise SchemaError(f"{schema}: columns have different lengths {sorted(n)}")
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([_fmt(x, k) for x, (_, k) in zip(row, spec)])
    return n.pop()


def validate_csv(path, schema: str):
    """Re-read a file and check header, row count and that every cell parses."""
    spec = SCHEMAS[schema]
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != [c for c, _ in spec]:
        raise SchemaError(f"{path}: header does not match schema {schema}")
    if len(rows) < 2:
        raise SchemaError(f"{path}: no data rows")
    for k, row in enumerate(rows[1:], start=2):
        if len(row) != len(spec):
            raise SchemaError(f"{path}:{k}: expected {len(spec)} fields, got {len(row)}")
        for cell, (name, kind) in zip(row, spec):
            try:
                if kind == "f":
                    float(cell)
                elif kind == "i":
                    int(cell)
                elif kind == "b" and cell not in ("0", "1"):
                    raise ValueError(cell)
            except ValueError:
                raise SchemaError(f"{path}:{k}: column {name} = {cell!r} is not of kind {kind}") from None
    return len(rows) - 1


def read_csv(path):
    """Columns of a CSV as a dict of numpy arrays (strings kept where needed)."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    out = {}
    for j, name in enumerate(rows[0]):
        vals = [r[j] for r in rows[1:]]
        try:
            out[name] = np.array([float(v) for v in vals])
        except ValueError:
            out[name] = np.array(vals)
    return out


def sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
