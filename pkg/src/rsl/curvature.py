"""Pointwise curvature and first-order geometric operators on a metric field.

Conventions
-----------
* ``R_{ijkl} = <R(d_i, d_j) d_k, d_l>`` with ``R(X,Y) = [nabla_X, nabla_Y] - nabla_[X,Y]``,
  so ``R_{ijji}`` is the sectional curvature and ``Ric_jk = g^{il} R_{ijkl}``.
* ``Delta`` is the (negative semidefinite) rough Laplacian ``g^{ab} nabla_a nabla_b``.
* ``(div h)_j = g^{ik} nabla_i h_kj`` with no sign flip.
* ``(delta* X)_ij = (nabla_i X_j + nabla_j X_i) / 2``.  With these choices
  ``<div h, X> = -<h, delta* X>``; the formal adjoint of ``div`` is ``-delta*``.

Curvature is obtained by differencing the Christoffel symbols, never by
taking second differences of ``g`` directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import (
    GridMismatchError,
    MetricField,
    ScalarField,
    SymTensorField,
    VectorField,
    coerce_metric,
    diff1,
    diff2,
    gradient_array,
    to_full,
    to_packed,
)


def _same_grid(*fields):
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatchError("operands live on different grids")
    return grid


def christoffel(g: MetricField) -> np.ndarray:
    """``Gamma^k_ij`` as an array of shape ``grid.shape + (n, n, n)`` indexed [k, i, j]."""
    grid = g.grid
    dg = gradient_array(g.full(), grid)  # [..., i, j, a] = d_a g_ij
    lower = 0.5 * (
        np.einsum("...jli->...lij", dg)
        + np.einsum("...ilj->...lij", dg)
        - np.einsum("...ijl->...lij", dg)
    )
    return np.einsum("...kl,...lij->...kij", g.inverse(), lower)


@dataclass
class CurvaturePack:
    christoffel: np.ndarray
    riemann: np.ndarray
    ricci: SymTensorField
    scalar: ScalarField

    def sup_norms(self) -> dict:
        return {
            "christoffel": float(np.max(np.abs(self.christoffel))),
            "riemann": float(np.max(np.abs(self.riemann))),
            "ricci": self.ricci.sup_norm(),
            "scalar": self.scalar.sup_norm(),
        }


def curvature_of(g: MetricField) -> CurvaturePack:
    """Christoffel symbols, lowered Riemann tensor, Ricci and scalar curvature."""
    g = coerce_metric(g)
    grid = g.grid
    gam = christoffel(g)
    dgam = gradient_array(gam, grid)  # [..., l, j, k, i] = d_i Gamma^l_jk
    # R^l_{ijk} = d_i G^l_jk - d_j G^l_ik + G^l_im G^m_jk - G^l_jm G^m_ik
    up = (
        np.einsum("...ljki->...lijk", dgam)
        - np.einsum("...likj->...lijk", dgam)
        + np.einsum("...lim,...mjk->...lijk", gam, gam)
        - np.einsum("...ljm,...mik->...lijk", gam, gam)
    )
    riemann = np.einsum("...lm,...mijk->...ijkl", g.full(), up)
    ric_full = np.einsum("...iijk->...jk", up)
    ricci = SymTensorField(grid, to_packed(ric_full))
    scalar = ScalarField(grid, np.einsum("...jk,...jk->...", g.inverse(), ricci.full()))
    return CurvaturePack(gam, riemann, ricci, scalar)


def ricci_tensor(g: MetricField, gam: np.ndarray | None = None) -> np.ndarray:
    """Symmetrised Ricci tensor (full (..., n, n)) from contracted Christoffel differences.

    Same stencils as :func:`curvature_of`, without forming the Riemann tensor.
    """
    if gam is None:
        gam = christoffel(g)
    return _ricci_from_gamma(gam, g.grid)


def covariant_derivative_oneform(X: np.ndarray, gam: np.ndarray, grid) -> np.ndarray:
    """``nabla_i X_j`` as [..., i, j]."""
    dX = np.swapaxes(gradient_array(X, grid), -1, -2)  # [..., i, j] = d_i X_j
    return dX - np.einsum("...kij,...k->...ij", gam, X)


def covariant_derivative_tensor(hfull: np.ndarray, gam: np.ndarray, grid) -> np.ndarray:
    """``nabla_a h_ij`` as [..., a, i, j] for a symmetric (0,2) tensor."""
    dh = np.moveaxis(gradient_array(hfull, grid), -1, -3)  # [..., a, i, j]
    return (
        dh
        - np.einsum("...kai,...kj->...aij", gam, hfull)
        - np.einsum("...kaj,...ik->...aij", gam, hfull)
    )


def divergence(h: SymTensorField, g: MetricField) -> VectorField:
    """``(div h)_j = g^{ik} nabla_i h_kj``."""
    grid = _same_grid(h, g)
    g = coerce_metric(g)
    nab = covariant_derivative_tensor(h.full(), christoffel(g), grid)
    return VectorField(grid, np.einsum("...ik,...ikj->...j", g.inverse(), nab))


def div_adjoint(X: VectorField, g: MetricField) -> SymTensorField:
    """``delta* X = (nabla_i X_j + nabla_j X_i) / 2``, half the Lie derivative of g."""
    grid = _same_grid(X, g)
    g = coerce_metric(g)
    nab = covariant_derivative_oneform(X.data, christoffel(g), grid)
    return SymTensorField(grid, to_packed(nab))


def hessian(f: ScalarField, g: MetricField) -> SymTensorField:
    """``nabla_i nabla_j f = d_i d_j f - Gamma^k_ij d_k f``.

    The second partials are composed first differences, which makes
    ``hessian(f) == div_adjoint(grad f)`` hold exactly on the grid.
    """
    grid = _same_grid(f, g)
    g = coerce_metric(g)
    df = gradient_array(f.data, grid)
    return div_adjoint(VectorField(grid, df), g)


def gradient(f: ScalarField) -> VectorField:
    return VectorField(f.grid, gradient_array(f.data, f.grid))


def laplace_beltrami(f: ScalarField, g: MetricField) -> ScalarField:
    """Divergence-form ``|g|^{-1/2} d_i(|g|^{1/2} g^{ij} d_j f)``."""
    grid = _same_grid(f, g)
    g = coerce_metric(g)
    sq = g.sqrt_det()
    flux = sq[..., None] * np.einsum("...ij,...j->...i", g.inverse(), gradient_array(f.data, grid))
    div = sum(diff1(flux[..., i], i, grid.spacing[i], grid.stencil_order) for i in range(grid.dim))
    return ScalarField(grid, div / sq)


def _rough_laplacian_constant(hdata: np.ndarray, ginv: np.ndarray, grid, compact: bool) -> np.ndarray:
    h, order = grid.spacing, grid.stencil_order
    n = grid.dim
    out = np.zeros_like(hdata)
    for a in range(n):
        if compact:
            out += ginv[a, a] * diff2(hdata, a, h[a], order)
        else:
            out += ginv[a, a] * diff1(diff1(hdata, a, h[a], order), a, h[a], order)
        for b in range(a + 1, n):
            if ginv[a, b] != 0.0:
                out += 2 * ginv[a, b] * diff1(diff1(hdata, a, h[a], order), b, h[b], order)
    return out


def rough_laplacian(h: SymTensorField, g: MetricField, compact: bool = True,
                    gam: np.ndarray | None = None) -> SymTensorField:
    """Connection Laplacian ``g^{ab} nabla_a nabla_b h``.

    ``compact=True`` replaces the pure second partials ``d_a d_a`` by the
    compact second-difference stencil (no spurious grid-scale kernel);
    ``compact=False`` composes first differences throughout, which is the
    exact linearisation of the Ricci-DeTurck right-hand side at a constant
    metric.
    """
    grid = _same_grid(h, g)
    g = coerce_metric(g)
    if g.is_constant():
        ginv = g.inverse().reshape(-1, grid.dim, grid.dim)[0]
        return SymTensorField(grid, _rough_laplacian_constant(h.data, ginv, grid, compact))
    if gam is None:
        gam = christoffel(g)
    ginv = g.inverse()
    T = covariant_derivative_tensor(h.full(), gam, grid)  # [..., b, i, j]
    dT = gradient_array(T, grid)  # [..., b, i, j, a]
    nabT = (
        np.einsum("...bija->...abij", dT)
        - np.einsum("...kab,...kij->...abij", gam, T)
        - np.einsum("...kai,...bkj->...abij", gam, T)
        - np.einsum("...kaj,...bik->...abij", gam, T)
    )
    lap = np.einsum("...ab,...abij->...ij", ginv, nabT)
    out = to_packed(lap)
    if compact:
        sp, order = grid.spacing, grid.stencil_order
        for a in range(grid.dim):
            corr = diff2(h.data, a, sp[a], order) - diff1(diff1(h.data, a, sp[a], order), a, sp[a], order)
            out += ginv[..., a, a][..., None] * corr
    return SymTensorField(grid, out)


def lichnerowicz_apply(h: SymTensorField, g: MetricField, compact: bool = True,
                       curvature: CurvaturePack | None = None,
                       curvature_sign: float = 1.0) -> SymTensorField:
    """``Delta_L h_ij = Delta h_ij + 2 R_{ipqj} h^{pq}``.

    ``curvature`` may be passed to reuse (or, in tests, replace) the curvature
    pack of ``g``; ``curvature_sign`` scales the curvature term and exists as
    a test hook for constructing operators with positive spectrum.
    """
    grid = _same_grid(h, g)
    g = coerce_metric(g)
    if curvature is None and g.is_constant():
        return rough_laplacian(h, g, compact=compact)
    if curvature is None:
        curvature = curvature_of(g)
    lap = rough_laplacian(h, g, compact=compact, gam=curvature.christoffel)
    ginv = g.inverse()
    h_up = np.einsum("...pa,...qb,...ab->...pq", ginv, ginv, h.full())
    term = np.einsum("...ipqj,...pq->...ij", curvature.riemann, h_up)
    return SymTensorField(grid, lap.data + 2.0 * curvature_sign * to_packed(term))


def deturck_vector(g: MetricField, g0: MetricField, gam: np.ndarray | None = None,
                   gam0: np.ndarray | None = None) -> np.ndarray:
    """``W_j = g_jk g^{pq} (Gamma^k_pq(g) - Gamma^k_pq(g0))`` (index lowered by g)."""
    if gam is None:
        gam = christoffel(g)
    if gam0 is None:
        gam0 = 0.0 if g0.is_constant() else christoffel(g0)
    W_up = np.einsum("...pq,...kpq->...k", g.inverse(), gam - gam0)
    return np.einsum("...jk,...k->...j", g.full(), W_up)


def deturck_correction(g: MetricField, g0: MetricField) -> SymTensorField:
    """DeTurck term ``P_{g0}(g) = nabla_i W_j + nabla_j W_i``."""
    grid = _same_grid(g, g0)
    g, g0 = coerce_metric(g), coerce_metric(g0)
    gam = christoffel(g)
    W = deturck_vector(g, g0, gam=gam)
    nab = covariant_derivative_oneform(W, gam, grid)
    return SymTensorField(grid, to_packed(nab + np.swapaxes(nab, -1, -2)))


def flow_rhs_numpy(gdata: np.ndarray, grid, gam0: np.ndarray | None, deturck: bool) -> np.ndarray:
    """Packed right-hand side ``-2 Ric(g) [+ P_{g0}(g)]`` from raw node data.

    Reference implementation of the compiled kernel in ``rsl._kernels``.
    """
    gfull = to_full(gdata, grid.dim)
    ginv = np.linalg.inv(gfull)
    dg = gradient_array(gfull, grid)
    lower = 0.5 * (
        np.einsum("...jli->...lij", dg)
        + np.einsum("...ilj->...lij", dg)
        - np.einsum("...ijl->...lij", dg)
    )
    gam = np.einsum("...kl,...lij->...kij", ginv, lower)
    rhs = -2.0 * _ricci_from_gamma(gam, grid)
    if deturck:
        diffgam = gam if gam0 is None else gam - gam0
        W_up = np.einsum("...pq,...kpq->...k", ginv, diffgam)
        W = np.einsum("...jk,...k->...j", gfull, W_up)
        nab = covariant_derivative_oneform(W, gam, grid)
        rhs = rhs + nab + np.swapaxes(nab, -1, -2)
    return to_packed(rhs)


def _ricci_from_gamma(gam: np.ndarray, grid) -> np.ndarray:
    n = grid.dim
    h, order = grid.spacing, grid.stencil_order
    div_gam = sum(diff1(gam[..., i, :, :], i, h[i], order) for i in range(n))
    trace = np.einsum("...iik->...k", gam)
    dtrace = gradient_array(trace, grid)
    return (
        div_gam
        - 0.5 * (dtrace + np.swapaxes(dtrace, -1, -2))
        + np.einsum("...m,...mjk->...jk", trace, gam)
        - np.einsum("...ijm,...mik->...jk", gam, gam)
    )


def model_curvature(g: MetricField, sectional: float) -> CurvaturePack:
    """Curvature pack of constant sectional curvature ``sectional`` built on ``g``.

    ``R_ijkl = K (g_il g_jk - g_ik g_jl)`` with vanishing Christoffel symbols.
    This is not the curvature of ``g``; it is used to build Lichnerowicz
    operators with a known spectrum (constant trace-free tensors are
    eigenvectors with eigenvalue ``-2K``).
    """
    g = coerce_metric(g)
    gf = g.full()
    n = g.grid.dim
    riemann = sectional * (
        np.einsum("...il,...jk->...ijkl", gf, gf) - np.einsum("...ik,...jl->...ijkl", gf, gf)
    )
    ric = SymTensorField(g.grid, (n - 1) * sectional * g.data)
    scalar = ScalarField(g.grid, np.full(g.grid.shape, n * (n - 1) * sectional))
    gam = np.zeros(g.grid.shape + (n, n, n))
    return CurvaturePack(gam, riemann, ric, scalar)
