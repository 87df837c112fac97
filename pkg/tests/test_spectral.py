import json

import numpy as np
import pytest
import scipy.linalg as sl
from hypothesis import given
from hypothesis import strategies as st

from rsl.curvature import curvature_of, div_adjoint, hessian, model_curvature
from rsl.grid import (
    GridSpec,
    MetricField,
    ScalarField,
    SymTensorField,
    VectorField,
    band_limited_perturbation,
    band_limited_scalar,
    band_limited_vector,
    coerce_metric,
    gradient_array,
    inner_product,
    l2_norm,
    volume_weight,
)
from rsl.lanczos import block_lanczos
from rsl.spectral import (
    NonFlatBackgroundError,
    Verdict,
    constant_metric_gap,
    decompose,
    default_eig_tol,
    first_variation_lambda,
    lambda_of,
    lichnerowicz_spectrum,
    perelman_F,
    schrodinger_matrix,
    second_variation_L,
    solve_poisson,
    stability_verdict,
    tt_defect,
)


def _phi(X, Y):
    return 0.2 * np.sin(X) * np.cos(2 * Y) + 0.1 * np.cos(X + Y)


def _conformal(grid):
    X, Y = grid.coordinates()
    return MetricField(grid, (1 + _phi(X, Y))[..., None] * MetricField.flat(grid).data)


def _fourier_lambda(M=24):
    """lambda of (1 + phi) delta from a dense Fourier discretisation.

    For ``g = e^{2w} delta`` in 2D, ``-4 Lap_g u + R u = lambda u`` becomes the
    generalized problem ``(-4 Lap - 2 Lap(w)) u = lambda e^{2w} u``.
    """
    x = 2 * np.pi * np.arange(M) / M
    X, Y = np.meshgrid(x, x, indexing="ij")
    k = np.fft.fftfreq(M, 1 / M)
    D2 = np.real(np.fft.ifft(-(k**2)[:, None] * np.fft.fft(np.eye(M), axis=0), axis=0))
    eye = np.eye(M)
    L = np.kron(D2, eye) + np.kron(eye, D2)
    w = 0.5 * np.log1p(_phi(X, Y)).ravel()
    A = -4 * L - 2 * np.diag(L @ w)
    return sl.eigh(0.5 * (A + A.T), np.diag(np.exp(2 * w)), eigvals_only=True,
                   subset_by_index=[0, 0])[0]


FOURIER_LAMBDA = _fourier_lambda()


def _spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def _perturbed(grid, seed, amp=0.05, kmax=2):
    return coerce_metric(MetricField.flat(grid) + band_limited_perturbation(grid, seed, kmax, amp))


# ---------------------------------------------------------------------------
# lambda


@given(seed=st.integers(0, 10_000), dim=st.sampled_from([2, 3]))
def test_lambda_vanishes_on_constant_metrics(seed, dim):
    grid = GridSpec(dim, 8, (2 * np.pi, 3.0, 5.0)[:dim], 4)
    lam, u = lambda_of(MetricField.flat(grid, _spd(np.random.default_rng(seed), dim)))
    assert abs(lam) <= 1e-8
    assert np.ptp(u.data) <= 1e-8 * np.max(u.data)


def test_lambda_against_fourier_oracle():
    assert abs(FOURIER_LAMBDA - _fourier_lambda(32)) <= 1e-10
    errs = {}
    for order in (2, 4, 6):
        errs[order] = [abs(lambda_of(_conformal(GridSpec(2, N, 2 * np.pi, order)))[0] - FOURIER_LAMBDA)
                       for N in (32, 64)]
        assert np.log2(errs[order][0] / errs[order][1]) >= order - 0.5
    assert errs[6][0] <= 5e-6


def test_lambda_matches_dense_eigenvalue():
    grid = GridSpec(2, 12, 2 * np.pi, 4)
    g = _perturbed(grid, 2, amp=0.2)
    H, _ = schrodinger_matrix(g)
    dense = np.linalg.eigvalsh(H.toarray())[0]
    assert lambda_of(g)[0] == pytest.approx(dense, abs=1e-11)


@given(seed=st.integers(0, 10_000), c=st.floats(0.25, 4.0))
def test_lambda_scaling_law(seed, c):
    grid = GridSpec(2, 16, 2 * np.pi, 2)
    g = _perturbed(grid, seed, amp=0.1)
    lam = lambda_of(g)[0]
    assert lambda_of(MetricField(grid, c * g.data))[0] == pytest.approx(lam / c, rel=1e-9, abs=1e-13)


@given(seed=st.integers(0, 10_000), shift=st.integers(1, 15))
def test_lambda_invariant_under_translation(seed, shift):
    grid = GridSpec(2, 16, 2 * np.pi, 4)
    g = _perturbed(grid, seed, amp=0.1)
    moved = MetricField(grid, np.roll(g.data, shift, axis=0))
    assert lambda_of(moved)[0] == pytest.approx(lambda_of(g)[0], rel=1e-10, abs=1e-13)


def test_ground_state_and_entropy_consistency():
    grid = GridSpec(2, 32, 2 * np.pi, 6)
    g = _perturbed(grid, 4, amp=0.1)
    lam, u = lambda_of(g)
    w = volume_weight(g)
    assert np.min(u.data) > 0
    assert np.sum(u.data**2 * w.dV.data) == pytest.approx(1.0, rel=1e-12)
    R = curvature_of(g).scalar.data
    assert lam <= np.sum(R * w.dV.data) / w.volume + 1e-14
    F = perelman_F(g, ScalarField(grid, -2 * np.log(u.data)))
    assert abs(F - lam) <= 1e-6


def test_first_variation_against_finite_difference():
    seed = 0
    grid = GridSpec(2, 64, 2 * np.pi, 6)
    X, Y = grid.coordinates()
    c = 1 + 0.2 * np.sin(X)
    g = MetricField(grid, np.stack([c, 0 * c, c], axis=-1))
    h = band_limited_perturbation(grid, seed, 2, 1.0)
    s = 1e-4
    fd = (lambda_of(MetricField(grid, g.data + s * h.data))[0]
          - lambda_of(MetricField(grid, g.data - s * h.data))[0]) / (2 * s)
    assert first_variation_lambda(g, h) == pytest.approx(fd, rel=1e-5)


@given(seed=st.integers(0, 10_000))
def test_flat_metric_is_critical(seed):
    grid = GridSpec(2, 16, 2 * np.pi, 2)
    g = MetricField.flat(grid)
    h = band_limited_perturbation(grid, seed, 3, 1.0)
    assert abs(first_variation_lambda(g, h)) <= 1e-10 * l2_norm(h, volume_weight(g))


# ---------------------------------------------------------------------------
# second variation


@given(seed=st.integers(0, 10_000))
def test_second_variation_symmetric_and_nonpositive(seed):
    grid = GridSpec(2, 16, (2 * np.pi, 4.0), 4)
    g0 = MetricField.flat(grid, [[1.5, 0.2], [0.2, 1.0]])
    w = volume_weight(g0)
    h1 = band_limited_perturbation(grid, seed, 3, 1.0)
    h2 = band_limited_perturbation(grid, seed + 1, 3, 1.0)
    L1, q1 = second_variation_L(h1, g0)
    L2, _ = second_variation_L(h2, g0)
    a, b = inner_product(L1, h2, w), inner_product(h1, L2, w)
    assert a == pytest.approx(b, rel=1e-8, abs=1e-10)
    assert q1 <= 1e-12


@given(seed=st.integers(0, 10_000), alpha=st.floats(-2.0, 2.0))
def test_second_variation_null_directions(seed, alpha):
    grid = GridSpec(2, 16, 2 * np.pi, 2)
    g0 = MetricField.flat(grid)
    w = volume_weight(g0)
    for h in (div_adjoint(band_limited_vector(grid, seed, 4, 1.0), g0),
              SymTensorField(grid, alpha * g0.data)):
        _, q = second_variation_L(h, g0)
        assert abs(q) <= 1e-10 * max(inner_product(h, h, w) / w.volume, 1e-300)


def test_flat_only_operations_reject_curved_background():
    grid = GridSpec(2, 16, 2 * np.pi)
    g = _perturbed(grid, 0)
    h = band_limited_perturbation(grid, 1, 2, 1.0)
    with pytest.raises(NonFlatBackgroundError):
        second_variation_L(h, g)
    with pytest.raises(NonFlatBackgroundError):
        decompose(h, g)


def test_poisson_solver_inverts_laplacian():
    grid = GridSpec(2, 32, 2 * np.pi, 4)
    g = MetricField.flat(grid, [[1.2, 0.1], [0.1, 0.8]])
    f = band_limited_scalar(grid, 3, 4, 1.0, zero_mean=True)
    lap = hessian(f, g).trace(g)
    sol = solve_poisson(lap, g)
    np.testing.assert_allclose(sol.data - sol.data.mean(), f.data - f.data.mean(), atol=1e-9)


# ---------------------------------------------------------------------------
# splitting


@given(seed=st.integers(0, 10_000), kmax=st.integers(1, 5))
def test_decomposition_properties(seed, kmax):
    grid = GridSpec(2, 16, (2 * np.pi, 5.0), 2)
    g = MetricField.flat(grid, [[1.3, -0.2], [-0.2, 0.9]])
    w = volume_weight(g)
    h = band_limited_perturbation(grid, seed, kmax, 1.0)
    dec = decompose(h, g)
    assert dec.residual.sup_norm() <= 1e-12
    parts = list(dec.parts().values())
    norms = [l2_norm(p, w) for p in parts]
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            if norms[i] > 1e-12 and norms[j] > 1e-12:
                assert abs(inner_product(parts[i], parts[j], w)) <= 1e-8 * norms[i] * norms[j]
    dv, tr = tt_defect(dec.n_part, g)
    assert max(dv, tr) * l2_norm(dec.n_part, w) <= 1e-8 * l2_norm(h, w)
    again = decompose(dec.n_part, g)
    assert l2_norm(again.n_part - dec.n_part, w) <= 1e-8 * l2_norm(h, w)


def test_decomposition_recovers_pure_summands():
    grid = GridSpec(2, 32, 2 * np.pi, 4)
    g = MetricField.flat(grid)
    w = volume_weight(g)
    f = band_limited_scalar(grid, 1, 3, 1.0)
    E = hessian(f, g)
    assert l2_norm(decompose(E, g).e_part - E, w) <= 1e-8 * l2_norm(E, w)
    G = SymTensorField(grid, 0.7 * g.data)
    dec = decompose(G, g)
    np.testing.assert_allclose(dec.g_part.data, G.data, atol=1e-15)
    assert l2_norm(dec.n_part, w) <= 1e-14
    # divergence-free vector field from a stream function
    psi = band_limited_scalar(grid, 2, 3, 1.0).data
    d = gradient_array(psi, grid)
    Y = VectorField(grid, np.stack([d[..., 1], -d[..., 0]], axis=-1))
    C = div_adjoint(Y, g)
    assert l2_norm(decompose(C, g).c_part - C, w) <= 1e-8 * l2_norm(C, w)


# ---------------------------------------------------------------------------
# Lanczos and the Lichnerowicz spectrum


def test_block_lanczos_against_dense_eigensolver():
    rng = np.random.default_rng(0)
    Q, _ = np.linalg.qr(rng.standard_normal((400, 400)))
    vals = np.concatenate([np.zeros(12), -np.linspace(1, 40, 388)])
    A = (Q * vals) @ Q.T
    res = block_lanczos(lambda X: A @ X, 400, 14, block_size=8, tol=1e-9)
    assert res.converged
    np.testing.assert_allclose(np.sort(res.values)[::-1], np.sort(vals)[::-1][:14], atol=1e-8)
    R = A @ res.vectors - res.vectors * res.values
    assert np.max(np.linalg.norm(R, axis=0)) <= 1e-8


def _compact_symbol_gap_order6(N, L):
    h = L / N
    t = 2 * np.pi / N
    return -(-49 / 18 + 2 * (1.5 * np.cos(t) - 0.15 * np.cos(2 * t) + np.cos(3 * t) / 90)) / h**2


def test_constant_metric_gap_frozen_values():
    g = MetricField.flat(GridSpec(3, 16, 2 * np.pi, 6))
    assert constant_metric_gap(g) == pytest.approx(_compact_symbol_gap_order6(16, 2 * np.pi), rel=1e-13)
    assert constant_metric_gap(g) == pytest.approx(0.9999936062444056, rel=1e-13)
    g = MetricField.flat(GridSpec(2, 16, (2 * np.pi, np.pi), 6))
    assert constant_metric_gap(g) == pytest.approx(0.9999936062444056, rel=1e-13)


@pytest.mark.parametrize("matrix", [None, [[2.0, 0.3], [0.3, 0.5]]])
def test_flat_spectrum_small_grid(matrix):
    grid = GridSpec(2, 16, 2 * np.pi, 4)
    g = MetricField.flat(grid, matrix)
    rep = lichnerowicz_spectrum(g)
    assert rep.converged
    assert rep.kernel_dimension == 3
    assert abs(rep.gap_two_delta - constant_metric_gap(g)) <= rep.eig_tol
    assert rep.verdict == Verdict.LINEARLY_STABLE
    assert rep.delta == pytest.approx(rep.gap_two_delta / 2)
    assert abs(rep.lambda_value) <= 1e-8
    d = json.loads(rep.to_json())
    assert d["tolerances"]["eig_tol"] == rep.eig_tol == default_eig_tol(grid)


def test_verdict_hook_unstable_and_inconclusive():
    grid = GridSpec(2, 12, 2 * np.pi, 2)
    g = MetricField.flat(grid)
    hook = model_curvature(g, 0.25)
    rep = lichnerowicz_spectrum(g, curvature=hook, curvature_sign=-1.0, with_lambda=False)
    assert max(rep.lichnerowicz_eigs) == pytest.approx(0.5, abs=1e-8)
    assert rep.verdict == Verdict.UNSTABLE
    assert stability_verdict(g, curvature=hook, curvature_sign=-1.0, report=rep) == Verdict.UNSTABLE
    loose = lichnerowicz_spectrum(g, eig_tol=2.0, with_lambda=False)
    assert loose.verdict == Verdict.INCONCLUSIVE
    assert loose.gap_two_delta is None
