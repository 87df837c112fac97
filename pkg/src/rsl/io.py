"""Field snapshots, CSV exports and JSON summaries.

Snapshot layout: one ASCII header line ``RSL1 dim N L_1 .. L_n rank`` then the
raw values as little-endian float64, node-major (C order over the grid
axes) with the component index fastest; symmetric tensors store the
``i <= j`` components in lexicographic order.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
from pathlib import Path

import numpy as np

from .grid import GridSpec, MetricField, ScalarField, SymTensorField, VectorField, sym_pairs

MAGIC = "RSL1"
_RANK_CLASS = {0: ScalarField, 1: VectorField, 2: SymTensorField}


class SnapshotFormatError(ValueError):
    pass


def write_snapshot(path, f) -> None:
    grid = f.grid
    lengths = " ".join(repr(float(L)) for L in grid.side_lengths)
    header = f"{MAGIC} {grid.dim} {grid.points_per_axis} {lengths} {f.rank}\n"
    payload = np.ascontiguousarray(f.data, dtype="<f8").tobytes()
    Path(path).write_bytes(header.encode("ascii") + payload)


def read_snapshot(path, stencil_order: int = 2, metric: bool = False):
    """Read a snapshot; ``metric=True`` returns a checked MetricField for rank 2."""
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise SnapshotFormatError("missing header line")
    parts = raw[:nl].decode("ascii").split()
    if not parts or parts[0] != MAGIC:
        raise SnapshotFormatError("not an RSL1 snapshot")
    try:
        dim, npts = int(parts[1]), int(parts[2])
        lengths = tuple(float(v) for v in parts[3:3 + dim])
        rank = int(parts[3 + dim])
    except (IndexError, ValueError) as exc:
        raise SnapshotFormatError(f"malformed header: {raw[:nl]!r}") from exc
    if len(parts) != 4 + dim or rank not in _RANK_CLASS:
        raise SnapshotFormatError(f"malformed header: {raw[:nl]!r}")
    grid = GridSpec(dim, npts, lengths, stencil_order)
    cls = _RANK_CLASS[rank]
    shape = cls._expected_shape(grid)
    data = np.frombuffer(raw[nl + 1:], dtype="<f8")
    if data.size != int(np.prod(shape)):
        raise SnapshotFormatError("payload size does not match the header")
    data = data.reshape(shape).astype(np.float64)
    if metric and rank == 2:
        return MetricField(grid, data)
    return cls(grid, data)


def component_names(f) -> list:
    n = f.grid.dim
    if f.rank == 0:
        return ["value"]
    if f.rank == 1:
        return [f"X_{j}" for j in range(n)]
    return [f"h_{i}{j}" for i, j in sym_pairs(n)]


def field_to_csv(path, f) -> None:
    """One row per node: integer node indices, coordinates, then components."""
    grid = f.grid
    n = grid.dim
    coords = grid.coordinates()
    values = f.data.reshape(grid.node_count, -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"i{a}" for a in range(n)] + [f"x{a}" for a in range(n)] + component_names(f))
        for k, idx in enumerate(np.ndindex(*grid.shape)):
            w.writerow(list(idx) + [_fmt(c[idx]) for c in coords] + [_fmt(v) for v in values[k]])


def _fmt(v) -> str:
    v = float(v)
    if math.isnan(v):
        return "nan"
    return repr(v)


def _cell(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)) and not isinstance(v, (bool, np.bool_)):
        return int(v)
    return _fmt(v)


def columns_to_csv(columns: dict) -> str:
    names = list(columns)
    rows = zip(*(columns[k] for k in names))
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_columns(path, columns: dict) -> None:
    Path(path).write_text(columns_to_csv(columns))


def read_columns(path) -> dict:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    names, body = rows[0], rows[1:]
    out = {}
    for j, name in enumerate(names):
        cells = [r[j] for r in body]
        try:
            out[name] = np.array([float(c) for c in cells], dtype=float)
        except ValueError:
            out[name] = cells
    return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if hasattr(obj, "value") and isinstance(getattr(obj, "value"), str):
        return obj.value
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
