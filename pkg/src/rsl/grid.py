"""Periodic grids on flat tori, tensor-field storage and finite differences.

Fields are stored node-major: the value array has shape ``grid.shape`` for
scalars and ``grid.shape + (ncomp,)`` otherwise.  Symmetric 2-tensors keep
one entry per unordered index pair ``i <= j`` in lexicographic order, so
symmetry holds exactly for every field built here.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

POSITIVITY_FLOOR = 1e-8

# Central first-derivative stencils (offset -> coefficient, before 1/dx).
FIRST_DERIVATIVE = {
    2: {1: 1 / 2},
    4: {1: 2 / 3, 2: -1 / 12},
    6: {1: 3 / 4, 2: -3 / 20, 3: 1 / 60},
}

# Compact central second-derivative stencils (before 1/dx^2).
SECOND_DERIVATIVE = {
    2: {0: -2.0, 1: 1.0},
    4: {0: -5 / 2, 1: 4 / 3, 2: -1 / 12},
    6: {0: -49 / 18, 1: 3 / 2, 2: -3 / 20, 3: 1 / 90},
}


class GridMismatchError(ValueError):
    """Fields built on different grids were combined."""


class RankMismatchError(ValueError):
    """Fields of different tensor rank were combined."""


class InadmissibleMetricError(ValueError):
    """A metric failed the positivity floor at some node."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


def sym_pairs(n: int) -> list[tuple[int, int]]:
    """Lexicographic list of index pairs ``(i, j)`` with ``i <= j``."""
    return [(i, j) for i in range(n) for j in range(i, n)]


@functools.lru_cache(maxsize=None)
def _pair_index(n: int) -> np.ndarray:
    idx = np.empty((n, n), dtype=np.intp)
    for p, (i, j) in enumerate(sym_pairs(n)):
        idx[i, j] = idx[j, i] = p
    return idx


def to_full(packed: np.ndarray, n: int) -> np.ndarray:
    """Expand packed symmetric components (..., ncomp) to (..., n, n)."""
    return packed[..., _pair_index(n)]


def to_packed(full: np.ndarray) -> np.ndarray:
    """Pack (..., n, n) into (..., ncomp), symmetrising first."""
    n = full.shape[-1]
    sym = 0.5 * (full + np.swapaxes(full, -1, -2))
    rows, cols = zip(*sym_pairs(n))
    return sym[..., list(rows), list(cols)]


@dataclass(frozen=True)
class GridSpec:
    """Uniform periodic grid on the flat torus ``prod_a [0, L_a)``.

    Parameters
    ----------
    dim : int
        Manifold dimension, 2 or 3.
    points_per_axis : int
        Nodes per axis, at least 8.
    side_lengths : sequence of float
        Coordinate period of each axis.  A single value is broadcast.
    stencil_order : int
        Accuracy order of the central difference stencils (2, 4 or 6).
    """

    dim: int
    points_per_axis: int
    side_lengths: tuple[float, ...]
    stencil_order: int = 2

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if int(self.points_per_axis) != self.points_per_axis or self.points_per_axis < 8:
            raise ValueError("points_per_axis must be an integer >= 8")
        lengths = self.side_lengths
        if np.isscalar(lengths):
            lengths = (float(lengths),) * self.dim
        lengths = tuple(float(v) for v in lengths)
        if len(lengths) == 1:
            lengths = lengths * self.dim
        if len(lengths) != self.dim:
            raise ValueError("need one side length per axis")
        if any(not np.isfinite(v) or v <= 0 for v in lengths):
            raise ValueError("side lengths must be positive")
        if self.stencil_order not in FIRST_DERIVATIVE:
            raise ValueError("stencil_order must be 2, 4 or 6")
        if self.points_per_axis <= self.stencil_order:
            raise ValueError("grid too coarse for the stencil")
        object.__setattr__(self, "side_lengths", lengths)
        object.__setattr__(self, "points_per_axis", int(self.points_per_axis))

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.points_per_axis,) * self.dim

    @property
    def node_count(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / self.points_per_axis for L in self.side_lengths)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def ncomp(self) -> int:
        return self.dim * (self.dim + 1) // 2

    def coordinates(self) -> list[np.ndarray]:
        """Node coordinates, one array of ``shape`` per axis (``ij`` indexing)."""
        axes = [np.arange(self.points_per_axis) * h for h in self.spacing]
        return np.meshgrid(*axes, indexing="ij")

    def with_points(self, points: int) -> "GridSpec":
        return GridSpec(self.dim, points, self.side_lengths, self.stencil_order)


class Field:
    """Base class: a value per grid node plus the grid it lives on."""

    rank = None

    def __init__(self, grid: GridSpec, data):
        data = np.asarray(data, dtype=np.float64)
        expected = self._expected_shape(grid)
        if data.shape != expected:
            raise ValueError(
                f"{type(self).__name__} expects shape {expected}, got {data.shape}"
            )
        self.grid = grid
        self.data = data

    @classmethod
    def _expected_shape(cls, grid):
        raise NotImplementedError

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(cls._expected_shape(grid)))

    def copy(self):
        return type(self)(self.grid, self.data.copy())

    def _check(self, other):
        if not isinstance(other, Field):
            return
        if other.grid != self.grid:
            raise GridMismatchError("fields live on different grids")
        if other.rank != self.rank:
            raise RankMismatchError(
                f"cannot combine rank {self.rank} with rank {other.rank}"
            )

    def _result_type(self):
        # arithmetic leaves the positive cone, so metrics decay to plain tensors
        return SymTensorField if isinstance(self, MetricField) else type(self)

    def __add__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return self._result_type()(self.grid, self.data + other.data)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, Field):
            self._check(other)
            return self._result_type()(self.grid, self.data - other.data)
        return NotImplemented

    def __neg__(self):
        return self._result_type()(self.grid, -self.data)

    def __mul__(self, other):
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise GridMismatchError("fields live on different grids")
            factor = other.data if self.rank == 0 else other.data[..., None]
            return self._result_type()(self.grid, self.data * factor)
        if np.isscalar(other):
            return self._result_type()(self.grid, self.data * float(other))
        return NotImplemented

    __rmul__ = __mul__

    def __truediv__(self, other):
        if np.isscalar(other):
            return self._result_type()(self.grid, self.data / float(other))
        return NotImplemented

    def sup_norm(self) -> float:
        """Largest absolute component over all nodes."""
        return float(np.max(np.abs(self.data))) if self.data.size else 0.0

    def __repr__(self):
        return f"{type(self).__name__}(grid={self.grid!r})"


class ScalarField(Field):
    rank = 0

    @classmethod
    def _expected_shape(cls, grid):
        return grid.shape


class VectorField(Field):
    """One-form components ``X_j`` (index down) at every node."""

    rank = 1

    @classmethod
    def _expected_shape(cls, grid):
        return grid.shape + (grid.dim,)


class SymTensorField(Field):
    rank = 2

    @classmethod
    def _expected_shape(cls, grid):
        return grid.shape + (grid.ncomp,)

    @classmethod
    def from_full(cls, grid, full):
        return cls(grid, to_packed(np.asarray(full, dtype=np.float64)))

    @classmethod
    def constant(cls, grid, matrix):
        matrix = np.asarray(matrix, dtype=np.float64)
        packed = to_packed(matrix)
        return cls(grid, np.broadcast_to(packed, grid.shape + packed.shape).copy())

    def full(self) -> np.ndarray:
        return to_full(self.data, self.grid.dim)

    def trace(self, metric: "MetricField") -> ScalarField:
        ginv = metric.inverse()
        return ScalarField(self.grid, np.einsum("...ij,...ij->...", ginv, self.full()))


class MetricField(SymTensorField):
    """Symmetric positive-definite field ``g_ij``; checked against a floor."""

    def __init__(self, grid, data, positivity_floor=POSITIVITY_FLOOR, check=True):
        super().__init__(grid, data)
        self.positivity_floor = positivity_floor
        self._inverse = None
        if check:
            lo = self.min_eigenvalue()
            if not np.isfinite(lo) or lo <= positivity_floor:
                raise InadmissibleMetricError(
                    f"metric not positive definite: smallest eigenvalue {lo:.3e} "
                    f"<= floor {positivity_floor:.1e}",
                    min_eigenvalue=lo,
                )

    @classmethod
    def flat(cls, grid, matrix=None):
        matrix = np.eye(grid.dim) if matrix is None else np.asarray(matrix, float)
        return cls(grid, SymTensorField.constant(grid, matrix).data)

    @classmethod
    def from_tensor(cls, tensor: SymTensorField, positivity_floor=POSITIVITY_FLOOR):
        return cls(tensor.grid, tensor.data, positivity_floor=positivity_floor)

    def copy(self):
        return MetricField(self.grid, self.data.copy(), self.positivity_floor, check=False)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.full())

    def min_eigenvalue(self) -> float:
        if not np.all(np.isfinite(self.data)):
            return float("nan")
        return float(np.min(self.eigenvalues()))

    def inverse(self) -> np.ndarray:
        """Pointwise inverse ``g^{ij}`` as a (..., n, n) array (cached)."""
        if self._inverse is None:
            self._inverse = np.linalg.inv(self.full())
        return self._inverse

    def sqrt_det(self) -> np.ndarray:
        return np.sqrt(np.linalg.det(self.full()))

    def is_constant(self, tol=0.0) -> bool:
        ref = self.data.reshape(-1, self.grid.ncomp)[0]
        return bool(np.max(np.abs(self.data - ref)) <= tol)


def coerce_metric(field: SymTensorField, positivity_floor=POSITIVITY_FLOOR) -> MetricField:
    if isinstance(field, MetricField):
        return field
    return MetricField(field.grid, field.data, positivity_floor=positivity_floor)


# ---------------------------------------------------------------------------
# finite differences


def _shift(a: np.ndarray, k: int, axis: int) -> np.ndarray:
    """Value at node ``i + k`` along ``axis`` with periodic wrap."""
    return np.roll(a, -k, axis=axis)


def diff1(a: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    out = np.zeros_like(a)
    for k, c in FIRST_DERIVATIVE[order].items():
        out += c * (_shift(a, k, axis) - _shift(a, -k, axis))
    return out / h


def diff2(a: np.ndarray, axis: int, h: float, order: int) -> np.ndarray:
    stencil = SECOND_DERIVATIVE[order]
    out = stencil[0] * a
    for k, c in stencil.items():
        if k:
            out = out + c * (_shift(a, k, axis) + _shift(a, -k, axis))
    return out / (h * h)


def partial_derivative(f: Field, axis: int, order: int = 1) -> Field:
    """Central finite-difference derivative of any field along one axis.

    ``order=2`` uses the compact second-difference stencil, not the square
    of the first-difference stencil.
    """
    grid = f.grid
    if not 0 <= axis < grid.dim:
        raise ValueError(f"axis {axis} out of range for dim {grid.dim}")
    h = grid.spacing[axis]
    if order == 1:
        data = diff1(f.data, axis, h, grid.stencil_order)
    elif order == 2:
        data = diff2(f.data, axis, h, grid.stencil_order)
    else:
        raise ValueError("derivative order must be 1 or 2")
    cls = SymTensorField if isinstance(f, MetricField) else type(f)
    return cls(grid, data)


def gradient_array(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    """All first partials of a raw node array: result[..., a] = d_a(array)."""
    parts = [diff1(a, ax, grid.spacing[ax], grid.stencil_order) for ax in range(grid.dim)]
    return np.stack(parts, axis=-1)


def first_difference_symbol(grid: GridSpec, axis: int, wavenumber: int) -> float:
    """Real symbol ``s`` with ``D exp(ikx) = i s exp(ikx)`` for the first stencil."""
    h = grid.spacing[axis]
    theta = 2 * np.pi * wavenumber / grid.points_per_axis
    return sum(2 * c * np.sin(k * theta) for k, c in FIRST_DERIVATIVE[grid.stencil_order].items()) / h


def second_difference_symbol(grid: GridSpec, axis: int, wavenumber: int) -> float:
    """Symbol (negative) of the compact second-difference stencil."""
    h = grid.spacing[axis]
    theta = 2 * np.pi * wavenumber / grid.points_per_axis
    st = SECOND_DERIVATIVE[grid.stencil_order]
    val = st[0] + sum(2 * c * np.cos(k * theta) for k, c in st.items() if k)
    return val / (h * h)


# ---------------------------------------------------------------------------
# inner products


@dataclass
class InnerProductWeight:
    """Per-node volume weights ``sqrt(det g) * prod(dx)`` and the metric used
    to contract indices of tensor arguments."""

    dV: ScalarField
    inverse_metric: np.ndarray = field(repr=False)

    @property
    def grid(self):
        return self.dV.grid

    @property
    def volume(self) -> float:
        return float(np.sum(self.dV.data))


def volume_weight(g: MetricField) -> InnerProductWeight:
    w = g.sqrt_det() * g.grid.cell_volume
    return InnerProductWeight(ScalarField(g.grid, w), g.inverse())


def flat_weight(grid: GridSpec) -> InnerProductWeight:
    """Weights of the identity metric on ``grid``."""
    return volume_weight(MetricField.flat(grid))


def pointwise_product(a: Field, b: Field, inverse_metric: np.ndarray) -> np.ndarray:
    """Metric contraction ``<a, b>`` at every node."""
    if a.rank == 0:
        return a.data * b.data
    if a.rank == 1:
        return np.einsum("...ij,...i,...j->...", inverse_metric, a.data, b.data)
    n = a.grid.dim
    af, bf = to_full(a.data, n), to_full(b.data, n)
    return np.einsum("...ik,...jl,...ij,...kl->...", inverse_metric, inverse_metric, af, bf)


def inner_product(a: Field, b: Field, w: InnerProductWeight) -> float:
    """Discrete ``int_M <a, b> dV``.

    Sums use numpy's pairwise reduction over the flattened node array, so the
    result does not depend on evaluation order beyond that fixed scheme.
    """
    if a.grid != b.grid or a.grid != w.grid:
        raise GridMismatchError("inner product across different grids")
    if a.rank != b.rank:
        raise RankMismatchError("inner product of fields with different rank")
    vals = pointwise_product(a, b, w.inverse_metric) * w.dV.data
    return float(np.sum(vals.ravel()))


def l2_norm(a: Field, w: InnerProductWeight) -> float:
    return float(np.sqrt(max(inner_product(a, a, w), 0.0)))


# ---------------------------------------------------------------------------
# random perturbations


def band_limited_array(grid: GridSpec, rng: np.random.Generator, ncomp: int | None,
                       max_wavenumber: int) -> np.ndarray:
    """Real random array whose Fourier modes satisfy ``max|k_a| <= max_wavenumber``."""
    shape = grid.shape + (() if ncomp is None else (ncomp,))
    if max_wavenumber < 0:
        raise ValueError("max_wavenumber must be >= 0")
    if 2 * max_wavenumber >= grid.points_per_axis:
        raise ValueError("max_wavenumber must stay below the Nyquist wavenumber")
    spec = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    freqs = np.fft.fftfreq(grid.points_per_axis, d=1.0 / grid.points_per_axis)
    mask = np.ones(grid.shape, dtype=bool)
    for ax in range(grid.dim):
        k = np.abs(freqs).reshape([-1 if i == ax else 1 for i in range(grid.dim)])
        mask &= k <= max_wavenumber
    if ncomp is not None:
        mask = mask[..., None]
    spec = np.where(mask, spec, 0.0)
    axes = tuple(range(grid.dim))
    return np.real(np.fft.ifftn(spec, axes=axes))


def band_limited_perturbation(grid: GridSpec, seed: int, max_wavenumber: int,
                              amplitude: float) -> SymTensorField:
    """Seeded smooth symmetric tensor field with sup-norm ``amplitude``.

    Coefficients are drawn in Fourier space from ``numpy.random.default_rng(seed)``
    and inverse-transformed; identical arguments give bit-identical fields.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    if amplitude == 0:
        return SymTensorField.zeros(grid)
    rng = np.random.default_rng(seed)
    data = band_limited_array(grid, rng, grid.ncomp, max_wavenumber)
    data *= amplitude / np.max(np.abs(data))
    return SymTensorField(grid, data)


def band_limited_scalar(grid: GridSpec, seed: int, max_wavenumber: int,
                        amplitude: float, zero_mean: bool = False) -> ScalarField:
    rng = np.random.default_rng(seed)
    data = band_limited_array(grid, rng, None, max_wavenumber)
    if zero_mean:
        data -= data.mean()
    if amplitude == 0:
        return ScalarField.zeros(grid)
    data *= amplitude / np.max(np.abs(data))
    return ScalarField(grid, data)


def band_limited_vector(grid: GridSpec, seed: int, max_wavenumber: int,
                        amplitude: float) -> VectorField:
    rng = np.random.default_rng(seed)
    data = band_limited_array(grid, rng, grid.dim, max_wavenumber)
    if amplitude == 0:
        return VectorField.zeros(grid)
    data *= amplitude / np.max(np.abs(data))
    return VectorField(grid, data)


def field_from_function(grid: GridSpec, fn, cls=ScalarField):
    """Evaluate ``fn(*coords)`` on the nodes; the result shape picks the layout."""
    return cls(grid, np.asarray(fn(*grid.coordinates()), dtype=np.float64))


def broadcast_components(grid: GridSpec, values: Sequence[np.ndarray]) -> np.ndarray:
    return np.stack([np.broadcast_to(v, grid.shape) for v in values], axis=-1)


def resample(f: Field, grid: GridSpec) -> Field:
    """Trigonometric interpolation of a band-limited field onto ``grid``.

    The grids must share dimension and side lengths.  Fourier content at or
    above the Nyquist wavenumber of either grid is not representable and is
    rejected, so refining and coarsening are exact for band-limited fields.
    """
    src = f.grid
    if grid.dim != src.dim or not np.allclose(grid.side_lengths, src.side_lengths, rtol=0, atol=0):
        raise GridMismatchError("resampling needs the same dimension and side lengths")
    n_src, n_dst = src.points_per_axis, grid.points_per_axis
    axes = tuple(range(src.dim))
    spec = np.fft.fftn(f.data, axes=axes)
    kmax = min(n_src, n_dst) // 2
    freqs = np.fft.fftfreq(n_src, d=1.0 / n_src)
    outside = np.zeros(src.shape, dtype=bool)
    for ax in axes:
        k = np.abs(freqs).reshape([-1 if i == ax else 1 for i in axes])
        outside |= k >= kmax
    tail = spec[outside]
    if tail.size and np.max(np.abs(tail)) > 1e-12 * max(np.max(np.abs(spec)), 1e-300):
        raise ValueError("field has content beyond the common Nyquist band")
    out = np.zeros(grid.shape + f.data.shape[src.dim:], dtype=complex)
    keep = np.concatenate([np.arange(kmax), np.arange(-kmax + 1, 0)])
    src_idx = np.ix_(*[keep % n_src] * src.dim)
    dst_idx = np.ix_(*[keep % n_dst] * src.dim)
    out[dst_idx] = spec[src_idx]
    data = np.real(np.fft.ifftn(out, axes=axes)) * (n_dst / n_src) ** src.dim
    cls = SymTensorField if isinstance(f, MetricField) else type(f)
    return cls(grid, data)
