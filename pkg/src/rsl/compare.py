"""Aligned-time comparison of two run directories."""

from __future__ import annotations

import configparser
from pathlib import Path

import numpy as np

from .io import read_columns

TRACE_FILES = ("trace.csv", "invariants.csv")
_KEY_COLUMNS = ("t", "seed", "ref_index")
_GRID_KEYS = ("dim", "points", "lengths", "order")


class IncompatibleRunsError(ValueError):
    """The two runs do not share a grid or a common time base."""


def _grid_of(run_dir: Path) -> dict:
    echo = run_dir / "config.ini"
    if not echo.exists():
        raise IncompatibleRunsError(f"{run_dir}: no config.ini echo")
    cp = configparser.ConfigParser(interpolation=None)
    cp.read(echo)
    return {k: cp.get("grid", k, fallback=None) for k in _GRID_KEYS}


def _keys(cols: dict) -> list:
    t = np.round(np.asarray(cols["t"], dtype=float), 10)
    if "seed" in cols:
        return list(zip(np.asarray(cols["seed"], dtype=int).tolist(), t.tolist()))
    return t.tolist()


def _column_stats(a: np.ndarray, b: np.ndarray) -> dict | None:
    ok = np.isfinite(a) & np.isfinite(b)
    if not np.any(ok):
        return None
    a, b = a[ok], b[ok]
    diff = np.abs(a - b)
    denom = np.maximum(np.abs(a), np.abs(b))
    rel = np.where(denom > 0, diff / np.where(denom > 0, denom, 1.0), 0.0)
    nz = b != 0
    ratio = a[nz] / b[nz]
    return {
        "max_abs_deviation": float(diff.max()),
        "max_relative_deviation": float(rel.max()),
        "ratio_min": float(ratio.min()) if ratio.size else None,
        "ratio_max": float(ratio.max()) if ratio.size else None,
        "samples": int(a.size),
    }


def compare_runs(dir_a, dir_b, files=TRACE_FILES) -> dict:
    """Diff the invariant columns of two runs at their common recorded times.

    Returns a report with, per file and column, the maximum absolute and
    relative deviation and the range of the ratio ``a / b``.  Columns that are
    not recorded (all NaN) are reported as ``None``.

    Raises
    ------
    IncompatibleRunsError
        Different grids, no shared trace file, or no common time.
    """
    dir_a, dir_b = Path(dir_a), Path(dir_b)
    ga, gb = _grid_of(dir_a), _grid_of(dir_b)
    if ga != gb:
        raise IncompatibleRunsError(f"grids differ: {ga} vs {gb}")
    report = {"run_a": str(dir_a), "run_b": str(dir_b), "grid": ga, "files": {}}
    overall = 0.0
    for name in files:
        pa, pb = dir_a / name, dir_b / name
        if not (pa.exists() and pb.exists()):
            continue
        ca, cb = read_columns(pa), read_columns(pb)
        if "t" not in ca or "t" not in cb:
            raise IncompatibleRunsError(f"{name}: missing time column")
        ka, kb = _keys(ca), _keys(cb)
        index_b = {k: i for i, k in enumerate(kb)}
        pairs = [(i, index_b[k]) for i, k in enumerate(ka) if k in index_b]
        if not pairs:
            raise IncompatibleRunsError(f"{name}: no common recorded times")
        ia = np.array([p[0] for p in pairs])
        ib = np.array([p[1] for p in pairs])
        columns = {}
        for col in ca:
            if col in _KEY_COLUMNS or col not in cb:
                continue
            stats = _column_stats(np.asarray(ca[col], dtype=float)[ia],
                                  np.asarray(cb[col], dtype=float)[ib])
            columns[col] = stats
            if stats is not None:
                overall = max(overall, stats["max_relative_deviation"])
        report["files"][name] = {"matched_times": len(pairs), "columns": columns}
    if not report["files"]:
        raise IncompatibleRunsError("the runs share no trace files")
    report["max_relative_deviation"] = overall
    return report
