"""CSV and JSON output.  Floats carry 17 significant digits (exact round trip)."""
from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import DataError

FMT = "%.17g"


def _coord_names(dim):
    return ["x"] if dim == 1 else ["x", "y"]


def write_field(path, grid, nodes, values, name="value"):
    """Real nodal values with their node index and coordinates."""
    nodes = np.asarray(nodes)
    cols = [nodes.astype(float), *grid.coords[nodes].T, np.asarray(values, dtype=float)]
    header = ",".join(["node_index", *_coord_names(grid.dim), name])
    fmt = ["%d"] + [FMT] * (len(cols) - 1)
    np.savetxt(path, np.column_stack(cols), fmt=fmt, delimiter=",", header=header, comments="")


def write_complex(path, grid, nodes, values):
    nodes = np.asarray(nodes)
    v = np.asarray(values, dtype=complex)
    cols = [nodes.astype(float), *grid.coords[nodes].T, v.real, v.imag]
    header = ",".join(["node_index", *_coord_names(grid.dim), "Re", "Im"])
    fmt = ["%d"] + [FMT] * (len(cols) - 1)
    np.savetxt(path, np.column_stack(cols), fmt=fmt, delimiter=",", header=header, comments="")


def _read(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if len(rows) < 2:
        raise DataError(f"{path}: no data rows")
    header, body = rows[0], rows[1:]
    try:
        arr = np.array([[float(v) for v in r] for r in body])
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    return header, arr


def read_field(path):
    """Last column of a field CSV."""
    _, arr = _read(path)
    return arr[:, -1]


def read_complex(path):
    """``(node_index, values)`` from a Re/Im CSV."""
    header, arr = _read(path)
    if header[-2:] != ["Re", "Im"]:
        raise DataError(f"{path}: expected Re, Im columns")
    return arr[:, 0].astype(int), arr[:, -2] + 1j * arr[:, -1]


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([FMT % v if isinstance(v, (float, np.floating)) else v for v in r])


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(v):
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"not serializable: {type(v)}")


def read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def data_name(ell, m):
    return f"data_p{ell}_{m}.csv"


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
