import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rsl.grid import (
    FIRST_DERIVATIVE,
    GridMismatchError,
    GridSpec,
    InadmissibleMetricError,
    MetricField,
    RankMismatchError,
    ScalarField,
    SymTensorField,
    VectorField,
    band_limited_perturbation,
    band_limited_scalar,
    diff1,
    diff2,
    first_difference_symbol,
    inner_product,
    l2_norm,
    resample,
    second_difference_symbol,
    sym_pairs,
    to_full,
    to_packed,
    volume_weight,
)
from rsl.io import (
    SnapshotFormatError,
    columns_to_csv,
    read_columns,
    read_snapshot,
    write_columns,
    write_snapshot,
)

orders = st.sampled_from([2, 4, 6])


def test_gridspec_validation():
    with pytest.raises(ValueError):
        GridSpec(4, 16, 1.0)
    with pytest.raises(ValueError):
        GridSpec(2, 4, 1.0)
    with pytest.raises(ValueError):
        GridSpec(2, 16, (1.0, -1.0))
    with pytest.raises(ValueError):
        GridSpec(2, 16, 1.0, 3)
    g = GridSpec(3, 16, 2.0)
    assert g.side_lengths == (2.0, 2.0, 2.0)
    assert g.ncomp == 6 and g.node_count == 16**3
    assert g.cell_volume == pytest.approx((2.0 / 16) ** 3)


def test_packing_roundtrip():
    rng = np.random.default_rng(0)
    for n in (2, 3):
        packed = rng.standard_normal((5, n * (n + 1) // 2))
        full = to_full(packed, n)
        assert np.array_equal(full, np.swapaxes(full, -1, -2))
        assert np.array_equal(to_packed(full), packed)
        assert len(sym_pairs(n)) == n * (n + 1) // 2


@given(order=orders, k=st.integers(0, 7))
def test_difference_symbols_match_stencils(order, k):
    grid = GridSpec(2, 16, 2 * np.pi, order)
    x = grid.coordinates()[0]
    h = grid.spacing[0]
    wave = np.exp(1j * k * x)
    d1 = diff1(wave.real, 0, h, order) + 1j * diff1(wave.imag, 0, h, order)
    d2 = diff2(wave.real, 0, h, order) + 1j * diff2(wave.imag, 0, h, order)
    np.testing.assert_allclose(d1, 1j * first_difference_symbol(grid, 0, k) * wave, atol=1e-12)
    np.testing.assert_allclose(d2, second_difference_symbol(grid, 0, k) * wave, atol=1e-11)


@pytest.mark.parametrize("order", [2, 4, 6])
def test_difference_convergence_order(order):
    errs = []
    for n in (16, 32):
        grid = GridSpec(2, n, 2 * np.pi, order)
        x = grid.coordinates()[0]
        f = np.sin(2 * x)
        errs.append(np.max(np.abs(diff1(f, 0, grid.spacing[0], order) - 2 * np.cos(2 * x))))
    assert np.log2(errs[0] / errs[1]) == pytest.approx(order, abs=0.3)


def test_first_stencil_coefficients_are_consistent():
    for order, st_ in FIRST_DERIVATIVE.items():
        # exact on the linear function: sum 2 k c_k = 1
        assert sum(2 * k * c for k, c in st_.items()) == pytest.approx(1.0)


def test_metric_positivity_enforced():
    grid = GridSpec(2, 8, 1.0)
    bad = np.zeros(grid.shape + (3,))
    bad[..., 0] = 1.0
    bad[..., 2] = -0.5
    with pytest.raises(InadmissibleMetricError):
        MetricField(grid, bad)
    with pytest.raises(InadmissibleMetricError):
        MetricField(grid, np.full(grid.shape + (3,), np.nan))


def test_arithmetic_checks_grid_and_rank():
    a = GridSpec(2, 8, 1.0)
    b = GridSpec(2, 16, 1.0)
    with pytest.raises(GridMismatchError):
        ScalarField.zeros(a) + ScalarField.zeros(b)
    with pytest.raises(RankMismatchError):
        ScalarField.zeros(a) + VectorField.zeros(a)
    m = MetricField.flat(a)
    assert type(m + m) is SymTensorField


@given(seed=st.integers(0, 10_000), order=orders)
def test_inner_product_symmetric_positive(seed, order):
    grid = GridSpec(2, 16, (2 * np.pi, 3.0), order)
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((2, 2))
    g = MetricField.flat(grid, A @ A.T + 2 * np.eye(2))
    w = volume_weight(g)
    h1 = band_limited_perturbation(grid, seed, 3, 1.0)
    h2 = band_limited_perturbation(grid, seed + 1, 3, 1.0)
    assert inner_product(h1, h2, w) == pytest.approx(inner_product(h2, h1, w), rel=1e-12, abs=1e-14)
    assert inner_product(h1, h1, w) > 0
    assert l2_norm(2.0 * h1, w) == pytest.approx(2 * l2_norm(h1, w), rel=1e-13)


def test_volume_of_flat_torus():
    grid = GridSpec(3, 8, (1.0, 2.0, 3.0))
    assert volume_weight(MetricField.flat(grid)).volume == pytest.approx(6.0, rel=1e-14)
    g = MetricField.flat(grid, 4.0 * np.eye(3))
    assert volume_weight(g).volume == pytest.approx(48.0, rel=1e-14)


@given(seed=st.integers(0, 2**31 - 1), kmax=st.integers(0, 5), amp=st.floats(1e-6, 10.0))
def test_band_limited_perturbation_properties(seed, kmax, amp):
    grid = GridSpec(2, 16, 2 * np.pi)
    h = band_limited_perturbation(grid, seed, kmax, amp)
    assert h.sup_norm() == pytest.approx(amp, rel=1e-12)
    again = band_limited_perturbation(grid, seed, kmax, amp)
    assert np.array_equal(h.data, again.data)
    spec = np.fft.fft2(h.data, axes=(0, 1))
    k = np.abs(np.fft.fftfreq(16, 1 / 16))
    outside = (k[:, None] > kmax) | (k[None, :] > kmax)
    assert np.max(np.abs(spec[outside])) <= 1e-10 * amp * 256


def test_band_limited_rejects_nyquist():
    with pytest.raises(ValueError):
        band_limited_perturbation(GridSpec(2, 16, 1.0), 0, 8, 1.0)


@given(seed=st.integers(0, 10_000))
def test_resample_exact_for_band_limited(seed):
    coarse = GridSpec(2, 16, 2 * np.pi)
    fine = coarse.with_points(32)
    f = band_limited_scalar(coarse, seed, 4, 1.0)
    up = resample(f, fine)
    np.testing.assert_allclose(up.data[::2, ::2], f.data, atol=1e-13)
    back = resample(up, coarse)
    np.testing.assert_allclose(back.data, f.data, atol=1e-13)


def test_resample_rejects_unresolved_content():
    fine = GridSpec(2, 32, 2 * np.pi)
    f = band_limited_scalar(fine, 0, 12, 1.0)
    with pytest.raises(ValueError):
        resample(f, fine.with_points(16))


def test_snapshot_roundtrip(tmp_path):
    grid = GridSpec(3, 8, (1.0, 2.0, np.pi), 4)
    h = band_limited_perturbation(grid, 3, 2, 0.1)
    g = MetricField.flat(grid) + h
    write_snapshot(tmp_path / "g.rsl", g)
    back = read_snapshot(tmp_path / "g.rsl", stencil_order=4, metric=True)
    assert isinstance(back, MetricField)
    assert back.grid == grid
    assert np.array_equal(back.data, g.data)
    raw = (tmp_path / "g.rsl").read_bytes()
    (tmp_path / "bad.rsl").write_bytes(raw[:-8])
    with pytest.raises(SnapshotFormatError):
        read_snapshot(tmp_path / "bad.rsl")
    (tmp_path / "junk.rsl").write_bytes(b"NOPE 2 8\n")
    with pytest.raises(SnapshotFormatError):
        read_snapshot(tmp_path / "junk.rsl")


def test_columns_roundtrip(tmp_path):
    cols = {"t": [0.0, 0.1, 0.2], "lambda": [float("nan"), 1e-300, -2.5], "ref_index": [0, 0, 1]}
    write_columns(tmp_path / "c.csv", cols)
    back = read_columns(tmp_path / "c.csv")
    assert np.array_equal(back["t"], cols["t"])
    assert np.isnan(back["lambda"][0]) and back["lambda"][1] == 1e-300
    assert columns_to_csv(cols).splitlines()[3] == "0.2,-2.5,1"
