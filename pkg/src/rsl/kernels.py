"""Backend selection for the flow right-hand side.

The compiled kernel ``rsl._kernels`` is used when it was built; otherwise,
or when ``RSL_BACKEND=python`` is set before import, the numpy reference
path in :mod:`rsl.curvature` is used.  Both give the same values up to
floating-point reassociation.
"""

from __future__ import annotations

import os

import numpy as np

from .curvature import flow_rhs_numpy
from .grid import FIRST_DERIVATIVE

_compiled = None
if os.environ.get("RSL_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def _coeffs(order: int) -> np.ndarray:
    st = FIRST_DERIVATIVE[order]
    return np.array([st[k] for k in sorted(st)], dtype=np.float64)


def flow_rhs(gdata: np.ndarray, grid, gam0: np.ndarray | None = None,
             deturck: bool = True, backend: str | None = None) -> np.ndarray:
    """Packed ``-2 Ric(g) + P_{g0}(g)`` (or ``-2 Ric(g)`` when ``deturck`` is false).

    Parameters
    ----------
    gdata : ndarray, shape ``grid.shape + (ncomp,)``
        Packed metric components.
    gam0 : ndarray or None
        Background Christoffel symbols ``[..., k, i, j]``; None for a constant background.
    backend : {"cython", "python"}, optional
        Override the import-time choice.
    """
    backend = backend or BACKEND
    if backend == "python" or _compiled is None:
        return flow_rhs_numpy(gdata, grid, gam0, deturck)
    n = grid.dim
    flat = np.ascontiguousarray(gdata.reshape(-1, grid.ncomp), dtype=np.float64)
    bg = None
    if gam0 is not None:
        bg = np.ascontiguousarray(np.broadcast_to(gam0, grid.shape + (n, n, n)).reshape(-1, n, n, n))
    out = _compiled.flow_rhs(flat, n, grid.points_per_axis,
                             np.asarray(grid.spacing, dtype=np.float64),
                             _coeffs(grid.stencil_order), bg, bool(deturck))
    return out.reshape(gdata.shape)
