"""Experiment drivers behind the ``rsl`` command.

Each driver turns a validated :class:`~rsl.config.ExperimentConfig` into an
:class:`Outcome`: a JSON-able summary, named pass/fail checks, CSV tables
and field snapshots.  :func:`run_experiment` writes these to the output
directory and maps the outcome onto the exit-code taxonomy.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .config import ConfigError, ExperimentConfig
from .curvature import curvature_of, div_adjoint
from .flows import (
    COMPLETED,
    LEFT_NEIGHBOURHOOD,
    FlowConfig,
    FlowKind,
    evolve,
    fit_decay_rate,
    gauge_transfer_check,
    remainder_check,
)
from .grid import (
    GridSpec,
    InadmissibleMetricError,
    MetricField,
    ScalarField,
    SymTensorField,
    band_limited_perturbation,
    band_limited_scalar,
    band_limited_vector,
    coerce_metric,
    inner_product,
    l2_norm,
    resample,
    sym_pairs,
    volume_weight,
)
from .io import write_columns, write_json, write_snapshot
from .lanczos import LanczosBreakdown
from .spectral import (
    EigensolverError,
    SolverConvergenceError,
    Verdict,
    constant_metric_gap,
    decompose,
    first_variation_lambda,
    lambda_of,
    lichnerowicz_spectrum,
    perelman_F,
    second_variation_L,
    stability_verdict,
    tt_defect,
)

log = logging.getLogger("rsl")

EXIT_OK = 0
EXIT_ASSERTION = 1
EXIT_SOLVER = 2
EXIT_CONFIG = 3

SOLVER_ERRORS = (SolverConvergenceError, EigensolverError, LanczosBreakdown)


@dataclass
class Outcome:
    experiment: str
    summary: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # file name -> columns
    snapshots: dict = field(default_factory=dict)  # file stem -> Field
    solver_failure: str | None = None

    @property
    def exit_code(self) -> int:
        if self.solver_failure is not None:
            return EXIT_SOLVER
        if not all(self.checks.values()):
            return EXIT_ASSERTION
        return EXIT_OK


# ---------------------------------------------------------------------------
# shared construction


def build_grid(cfg: ExperimentConfig) -> GridSpec:
    g = cfg.section("grid")
    return GridSpec(g["dim"], g["points"], g["lengths"], g["order"])


def perturbation(cfg: ExperimentConfig, grid: GridSpec, seed: int | None = None) -> SymTensorField:
    """The configured perturbation ``h`` of the flat identity background."""
    p = cfg.section("perturbation")
    seed = p["seed"] if seed is None else seed
    amp, kmax, mode = p["amplitude"], p["max_wavenumber"], p["mode"]
    g0 = MetricField.flat(grid)
    if mode == "none":
        return SymTensorField.zeros(grid)
    if mode == "band":
        h = band_limited_perturbation(grid, seed, kmax, amp)
        if p["zero_mean"]:
            h = SymTensorField(grid, h.data - h.data.mean(axis=tuple(range(grid.dim))))
        return h
    if mode == "single":
        comp = np.asarray(p["component"] or _unit_offdiagonal(grid.dim), dtype=float)
        x0 = grid.coordinates()[0]
        wave = np.cos(2 * np.pi * x0 / grid.side_lengths[0])
        return SymTensorField(grid, amp * wave[..., None] * comp)
    if mode == "conformal":
        phi = band_limited_scalar(grid, seed, kmax, amp, zero_mean=p["zero_mean"])
        return SymTensorField(grid, phi.data[..., None] * g0.data)
    if mode == "gauge":
        return div_adjoint(band_limited_vector(grid, seed, kmax, amp), g0)
    # shift: constant offset plus optional band-limited noise
    shift = np.asarray(p["shift"] or np.zeros(grid.ncomp), dtype=float)
    noise = band_limited_perturbation(grid, seed, kmax, amp)
    data = noise.data
    if p["zero_mean"]:
        data = data - data.mean(axis=tuple(range(grid.dim)))
    return SymTensorField(grid, data + shift)


def _unit_offdiagonal(n: int) -> np.ndarray:
    comp = np.zeros(n * (n + 1) // 2)
    comp[sym_pairs(n).index((0, 1))] = 1.0
    return comp


def initial_metric(cfg: ExperimentConfig, grid: GridSpec, seed: int | None = None) -> MetricField:
    """Background plus perturbation; raises InadmissibleMetricError if not positive."""
    g0 = MetricField.flat(grid)
    return coerce_metric(g0 + perturbation(cfg, grid, seed))


def flow_config(cfg: ExperimentConfig, background: MetricField, **overrides) -> FlowConfig:
    f = cfg.section("flow")
    kw = dict(flow_kind=f["kind"], background=background, dt_safety=f["dt_safety"],
              t_end=f["t_end"], record_every=f["record_every"],
              reference_update_period=f["reference_update_period"], dt=f["dt"],
              record_lambda=f["record_lambda"])
    kw.update(overrides)
    return FlowConfig(**kw)


def _seeds(cfg: ExperimentConfig) -> list:
    base = cfg.get("perturbation", "seed")
    return [base + i for i in range(cfg.get("experiment", "runs"))]


def _map(fn, args: list, jobs: int) -> list:
    """Ordered map; ``jobs > 1`` fans out to isolated worker processes."""
    if jobs <= 1 or len(args) <= 1:
        return [fn(*a) for a in args]
    with ProcessPoolExecutor(max_workers=min(jobs, len(args))) as pool:
        return list(pool.map(fn, *zip(*args)))


def _tol(cfg, key):
    return cfg.get("tolerances", key)


# ---------------------------------------------------------------------------
# curvature


def _conformal_scalar_error(phi_data: np.ndarray, grid: GridSpec) -> float:
    """Sup error of the discrete scalar curvature of ``(1 + phi) delta`` in 2D.

    Oracle: ``R = -(1 + phi)^{-1} Lap log(1 + phi)`` with a spectral Laplacian.
    """
    g = MetricField(grid, phi_data[..., None] * MetricField.flat(grid).data + MetricField.flat(grid).data)
    w = np.log1p(phi_data)
    kk = [np.fft.fftfreq(grid.points_per_axis, d=L / grid.points_per_axis) * 2 * np.pi
          for L in grid.side_lengths]
    k2 = sum(np.meshgrid(*[k**2 for k in kk], indexing="ij"))
    lap = np.real(np.fft.ifftn(-k2 * np.fft.fftn(w)))
    exact = -lap / (1.0 + phi_data)
    return float(np.max(np.abs(curvature_of(g).scalar.data - exact)))


def run_curvature(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out = Outcome("curvature")
    grid = build_grid(cfg)
    h = perturbation(cfg, grid)
    g = coerce_metric(MetricField.flat(grid) + h)
    pack = curvature_of(g)
    R = pack.riemann
    scale = max(float(np.max(np.abs(R))), 1e-300)
    first_pair = float(np.max(np.abs(R + np.swapaxes(R, -4, -3)))) / scale
    second_pair = float(np.max(np.abs(R + np.swapaxes(R, -2, -1)))) / scale
    pair_swap = float(np.max(np.abs(R - np.moveaxis(R, (-4, -3), (-2, -1))))) / scale
    bianchi = float(np.max(np.abs(R + np.einsum("...jkil->...ijkl", R)
                                  + np.einsum("...kijl->...ijkl", R)))) / scale
    sup = pack.sup_norms()
    out.summary.update({"sup_norms": sup, "riemann_antisymmetry_ij": first_pair,
                        "riemann_antisymmetry_kl": second_pair, "riemann_pair_symmetry": pair_swap,
                        "first_bianchi": bianchi,
                        "scalar_mean": float(np.mean(pack.scalar.data))})
    stol = _tol(cfg, "symmetry_tol")
    out.checks["antisymmetry_ij"] = first_pair <= stol
    out.checks["first_bianchi"] = bianchi <= stol
    if g.is_constant():
        out.checks["flat_certificate"] = max(sup.values()) <= _tol(cfg, "flat_tol")
    if cfg.get("perturbation", "mode") == "conformal" and grid.dim == 2 and h.sup_norm() > 0:
        phi = h.data[..., 0]
        fine = grid.with_points(2 * grid.points_per_axis)
        e1 = _conformal_scalar_error(phi, grid)
        e2 = _conformal_scalar_error(resample(ScalarField(grid, phi), fine).data, fine)
        ratio = e1 / e2 if e2 > 0 else math.inf
        out.summary["conformal_scalar_error"] = {"coarse": e1, "fine": e2, "ratio": ratio}
        out.checks["conformal_refinement"] = ratio >= _tol(cfg, "refinement_factor")
    out.snapshots.update({"metric": g, "ricci": pack.ricci, "scalar": pack.scalar})
    return out


# ---------------------------------------------------------------------------
# lambda


def run_lambda(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out = Outcome("lambda")
    grid = build_grid(cfg)
    g = initial_metric(cfg, grid)
    lam, u = lambda_of(g)
    F = perelman_F(g, ScalarField(grid, -2.0 * np.log(u.data)))
    pack = curvature_of(g)
    w = volume_weight(g)
    mean_R = float(np.sum(pack.scalar.data * w.dV.data) / w.volume)
    lam2, _ = lambda_of(MetricField(grid, 2.0 * g.data))
    out.summary.update({"lambda": lam, "F_at_minimiser": F, "mean_scalar": mean_R,
                        "lambda_of_doubled_metric": lam2})
    out.checks["F_matches_lambda"] = abs(F - lam) <= _tol(cfg, "consistency_tol") * (1 + abs(lam))
    out.checks["lambda_below_mean_scalar"] = lam <= mean_R + 1e-12 * (1 + abs(mean_R))
    out.checks["scaling_law"] = abs(lam2 - 0.5 * lam) <= 1e-10 * (1 + abs(lam))
    flat = g.is_constant()
    if flat:
        out.checks["flat_lambda_zero"] = abs(lam) <= _tol(cfg, "lambda_flat_tol")
    kmax = cfg.get("perturbation", "max_wavenumber")
    rows = {"seed": [], "first_variation": [], "h_norm": [], "ratio": []}
    for seed in _seeds(cfg):
        d = band_limited_perturbation(grid, 1000 + seed, kmax, 1.0)
        dl = first_variation_lambda(g, d, ground=(lam, u))
        nrm = l2_norm(d, w)
        rows["seed"].append(seed)
        rows["first_variation"].append(dl)
        rows["h_norm"].append(nrm)
        rows["ratio"].append(abs(dl) / nrm)
    out.tables["variations.csv"] = rows
    out.summary["max_first_variation_ratio"] = max(rows["ratio"])
    if flat:
        out.checks["critical_point"] = max(rows["ratio"]) <= _tol(cfg, "critical_tol")
    out.snapshots["ground_state"] = u
    return out


# ---------------------------------------------------------------------------
# Lichnerowicz spectrum and verdict


def _analysed_metric(cfg: ExperimentConfig, grid: GridSpec) -> MetricField:
    """Flat background, shifted by a constant when ``mode = shift``."""
    g0 = MetricField.flat(grid)
    if cfg.get("perturbation", "mode") == "shift" and cfg.get("perturbation", "shift"):
        return coerce_metric(g0 + SymTensorField(grid, np.broadcast_to(
            np.asarray(cfg.get("perturbation", "shift")), g0.data.shape).copy()))
    return g0


def _continuum_gap(g: MetricField) -> float:
    n = g.grid.dim
    ginv = g.inverse().reshape(-1, n, n)[0]
    two_pi_over_L = np.array([2 * np.pi / L for L in g.grid.side_lengths])
    best = math.inf
    for k in np.ndindex(*(7,) * n):
        kv = (np.array(k) - 3) * two_pi_over_L
        if np.any(k != np.full(n, 3)):
            best = min(best, float(kv @ ginv @ kv))
    return best


def _spectrum_outcome(cfg: ExperimentConfig, name: str) -> tuple[Outcome, object, MetricField]:
    out = Outcome(name)
    grid = build_grid(cfg)
    g = _analysed_metric(cfg, grid)
    report = lichnerowicz_spectrum(g, k=cfg.get("experiment", "k"),
                                   eig_tol=_tol(cfg, "eig_tol"),
                                   seed=cfg.get("perturbation", "seed"))
    discrete = constant_metric_gap(g)
    continuum = _continuum_gap(g)
    out.summary.update(report.to_dict())
    out.summary.update({"discrete_gap": discrete, "continuum_gap": continuum})
    out.checks["converged"] = bool(report.converged)
    out.checks["kernel_is_constant_tensors"] = report.kernel_dimension == grid.ncomp
    gap = report.gap_two_delta
    out.checks["gap_matches_stencil_symbol"] = gap is not None and abs(gap - discrete) <= report.eig_tol
    out.checks["gap_matches_continuum"] = gap is not None and abs(gap - continuum) <= _tol(cfg, "gap_tol") * continuum
    out.tables["spectrum.csv"] = {"index": list(range(len(report.lichnerowicz_eigs))),
                                  "eigenvalue": report.lichnerowicz_eigs,
                                  "residual": report.residuals}
    for i, h in enumerate(report.eigenfields):
        out.snapshots[f"eigenfield_{i:02d}"] = h
    if report.ground_state is not None:
        out.snapshots["ground_state"] = report.ground_state
    if not report.converged:
        out.solver_failure = report.note or "Lanczos did not converge"
    return out, report, g


def run_spectrum(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    return _spectrum_outcome(cfg, "spectrum")[0]


def run_stability(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out, report, g = _spectrum_outcome(cfg, "stability")
    verdict = stability_verdict(g, report=report)
    out.summary["verdict"] = verdict.value
    out.checks["linearly_stable"] = verdict == Verdict.LINEARLY_STABLE
    if verdict == Verdict.INCONCLUSIVE and out.solver_failure is None:
        out.solver_failure = "verdict inconclusive: " + (report.note or "no resolved nonzero eigenvalue")
    return out


# ---------------------------------------------------------------------------
# decomposition


def run_decompose(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out = Outcome("decompose")
    grid = build_grid(cfg)
    g0 = MetricField.flat(grid)
    h = perturbation(cfg, grid)
    w = volume_weight(g0)
    dec = decompose(h, g0)
    parts = dec.parts()
    hn = l2_norm(h, w)
    tol = _tol(cfg, "decomposition_tol")
    norms = {k: l2_norm(p, w) for k, p in parts.items()}
    worst = 0.0
    keys = list(parts)
    for i, a in enumerate(keys):
        for b in keys[i + 1:]:
            if norms[a] > 1e-14 * hn and norms[b] > 1e-14 * hn:
                c = abs(inner_product(parts[a], parts[b], w)) / (norms[a] * norms[b])
                worst = max(worst, c)
    residual = dec.residual.sup_norm() / max(h.sup_norm(), 1e-300)
    div_def, tr_def = tt_defect(dec.n_part, g0)
    again = decompose(dec.n_part, g0).n_part
    idem = l2_norm(again - dec.n_part, w) / max(hn, 1e-300)
    out.summary.update({"part_norms": norms, "h_norm": hn, "relative_residual": residual,
                        "max_normalised_overlap": worst, "tt_divergence_defect": div_def,
                        "tt_trace_defect": tr_def, "idempotence_defect": idem})
    out.checks["reassembles"] = residual <= tol
    out.checks["orthogonal"] = worst <= tol
    out.checks["n_part_transverse_traceless"] = max(div_def, tr_def) * norms["N"] <= tol * max(hn, 1e-300)
    out.checks["n_projection_idempotent"] = idem <= tol
    out.tables["parts.csv"] = {"part": keys, "l2_norm": [norms[k] for k in keys],
                               "sup_norm": [parts[k].sup_norm() for k in keys]}
    out.snapshots.update({f"part_{k}": p for k, p in parts.items()})
    return out


# ---------------------------------------------------------------------------
# second variation


def _lambda_second_difference(g0: MetricField, h: SymTensorField, s: float) -> float:
    def lam(a):
        return lambda_of(MetricField(g0.grid, g0.data + a * h.data))[0]
    return (-lam(2 * s) + 16 * lam(s) - 30 * lam(0.0) + 16 * lam(-s) - lam(-2 * s)) / (12 * s * s)


def _secondvar_seed(cfg: ExperimentConfig, seed: int) -> dict:
    grid = build_grid(cfg)
    fine = grid.with_points(2 * grid.points_per_axis)
    s = cfg.get("perturbation", "amplitude")
    kmax = cfg.get("perturbation", "max_wavenumber")
    h = band_limited_perturbation(grid, seed, kmax, 1.0)
    row = {"seed": seed}
    for tag, gr, hh in (("coarse", grid, h), ("fine", fine, resample(h, fine))):
        g0 = MetricField.flat(gr)
        _, val = second_variation_L(hh, g0)
        fd = _lambda_second_difference(g0, hh, s)
        row[f"operator_{tag}"] = val
        row[f"finite_difference_{tag}"] = fd
        row[f"relative_error_{tag}"] = abs(val - fd) / max(abs(fd), 1e-300)
    return row


def run_secondvar(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out = Outcome("secondvar")
    grid = build_grid(cfg)
    if cfg.get("perturbation", "amplitude") <= 0:
        raise ConfigError("secondvar uses [perturbation] amplitude as the finite-difference step")
    rows = _map(_secondvar_seed, [(cfg, s) for s in _seeds(cfg)], jobs)
    table = {k: [r[k] for r in rows] for k in rows[0]}
    out.tables["secondvar.csv"] = table
    err_c = np.asarray(table["relative_error_coarse"])
    err_f = np.asarray(table["relative_error_fine"])
    shrink = err_c / np.maximum(err_f, 1e-300)
    out.summary.update({"max_relative_error_coarse": float(err_c.max()),
                        "max_relative_error_fine": float(err_f.max()),
                        "min_refinement_ratio": float(shrink.min())})
    out.checks["matches_finite_difference"] = bool(err_c.max() <= _tol(cfg, "secondvar_tol"))
    out.checks["error_shrinks_under_refinement"] = bool(shrink.min() >= _tol(cfg, "refinement_factor"))
    # null directions: pure gauge and constant rescaling
    g0 = MetricField.flat(grid)
    w = volume_weight(g0)
    kmax = cfg.get("perturbation", "max_wavenumber")
    seed = cfg.get("perturbation", "seed")
    hg = div_adjoint(band_limited_vector(grid, seed, kmax, 1.0), g0)
    hs = SymTensorField(grid, 0.5 * g0.data)
    nulls = {}
    for name, hh in (("gauge", hg), ("scale", hs)):
        _, val = second_variation_L(hh, g0)
        nulls[name] = abs(val) / (inner_product(hh, hh, w) / w.volume)
    out.summary["null_direction_ratios"] = nulls
    out.checks["gauge_and_scale_null"] = max(nulls.values()) <= _tol(cfg, "null_tol")
    return out


# ---------------------------------------------------------------------------
# flows


def run_flow(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out = Outcome("flow")
    grid = build_grid(cfg)
    g0 = MetricField.flat(grid)
    mode = cfg.get("perturbation", "mode")
    h = perturbation(cfg, grid)
    try:
        g_init = coerce_metric(g0 + h)
    except InadmissibleMetricError as exc:
        out.summary.update({"status": LEFT_NEIGHBOURHOOD, "failure_time": 0.0,
                            "failure_reason": str(exc)})
        out.checks["stayed_in_neighbourhood"] = False
        return out
    fcfg = flow_config(cfg, g0)
    trace = evolve(g_init, fcfg)
    out.tables["trace.csv"] = trace.columns()
    out.tables["invariants.csv"] = trace.invariant_columns()
    out.summary.update({"status": trace.status, "failure_time": trace.failure_time,
                        "failure_reason": trace.failure_reason, "steps": len(trace.dt_history),
                        "t_final": trace.times[-1], "flow_kind": trace.flow_kind,
                        "backend": kernels.BACKEND})
    out.checks["stayed_in_neighbourhood"] = trace.status == COMPLETED
    if trace.updates:
        cols = {k: [u[k] for u in trace.updates] for k in trace.updates[0]}
        out.tables["updates.csv"] = cols
        zm = max(cols["zero_mode_projection"])
        C = max(cols["l2_ratio"])
        out.summary.update({"max_zero_mode_projection": zm, "update_ratio": C,
                            "update_sup_ratio": max(cols["sup_ratio"])})
        out.checks["zero_modes_removed"] = zm <= _tol(cfg, "zero_mode_tol")
        bound = _tol(cfg, "update_ratio_bound")
        if bound is not None:
            out.checks["update_ratio_bounded"] = C <= bound
    if trace.final_metric is not None:
        out.snapshots["final_metric"] = trace.final_metric
    if trace.status == COMPLETED and fcfg.flow_kind == FlowKind.DETURCK:
        _decay_checks(cfg, out, trace, g0, mode)
    if mode not in ("shift", "none") and h.sup_norm() > 0:
        _remainder_checks(cfg, out, h, g0)
    return out


def _decay_checks(cfg, out, trace, g0, mode):
    window = (cfg.get("flow", "fit_start"), trace.times[-1])
    if mode in ("single", "band"):
        try:
            fit = fit_decay_rate(trace, window)
        except ValueError as exc:
            out.summary["decay_fit_error"] = str(exc)
            out.checks["decay_fit"] = False
            return
        out.summary["decay_rate"] = fit.rate
        out.summary["decay_fit_residual"] = fit.residual
        if mode == "single":
            expected = (2 * np.pi / g0.grid.side_lengths[0]) ** 2
            out.summary["expected_rate"] = expected
            out.checks["single_mode_rate"] = abs(fit.rate - expected) <= _tol(cfg, "single_mode_rate_tol") * expected
        else:
            rep = lichnerowicz_spectrum(g0, eig_tol=_tol(cfg, "eig_tol"), with_lambda=False)
            gap = rep.gap_two_delta
            out.summary["gap_two_delta"] = gap
            out.checks["generic_rate_above_gap"] = gap is not None and fit.rate >= _tol(cfg, "generic_rate_fraction") * gap
    elif mode == "shift":
        shift = np.asarray(cfg.get("perturbation", "shift") or np.zeros(g0.grid.ncomp))
        target = g0 + SymTensorField(g0.grid, np.broadcast_to(shift, g0.data.shape).copy())
        sup = (trace.final_metric - target).sup_norm()
        out.summary["sup_distance_to_shifted_metric"] = sup
        out.checks["converged_to_shifted_metric"] = sup <= _tol(cfg, "weak_sup_tol")


def _remainder_checks(cfg, out, h, g0):
    direction = SymTensorField(g0.grid, h.data / h.sup_norm())
    scales = [1e-2, 1e-3, 1e-4]
    norms = [remainder_check(coerce_metric(g0 + s * direction), g0)[0] for s in scales]
    if min(norms) <= 0:
        out.summary["remainder_slope"] = None
        return
    slope = float(np.polyfit(np.log(scales), np.log(norms), 1)[0])
    out.tables["remainder.csv"] = {"scale": scales, "remainder_sup": norms}
    out.summary["remainder_slope"] = slope
    out.checks["remainder_quadratic"] = abs(slope - 2.0) <= _tol(cfg, "remainder_slope_tol")


def _monotonicity_seed(cfg: ExperimentConfig, seed: int) -> dict:
    grid = build_grid(cfg)
    g0 = MetricField.flat(grid)
    try:
        g_init = initial_metric(cfg, grid, seed)
    except InadmissibleMetricError as exc:
        return {"seed": seed, "status": LEFT_NEIGHBOURHOOD, "reason": str(exc), "columns": None}
    trace = evolve(g_init, flow_config(cfg, g0, record_lambda=True))
    return {"seed": seed, "status": trace.status, "reason": trace.failure_reason,
            "columns": trace.columns()}


def run_monotonicity(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out = Outcome("monotonicity")
    results = _map(_monotonicity_seed, [(cfg, s) for s in _seeds(cfg)], jobs)
    slack = _tol(cfg, "monotonicity_slack")
    table = {"seed": [], "t": [], "lambda": [], "l2_dist": [], "sup_dist": [], "ref_index": []}
    per_seed = []
    ok = True
    for r in results:
        cols = r["columns"]
        if cols is None or r["status"] != COMPLETED:
            per_seed.append({"seed": r["seed"], "status": r["status"], "reason": r["reason"]})
            ok = False
            if cols is None:
                continue
        lam = np.asarray(cols["lambda"], dtype=float)
        if not np.all(np.isfinite(lam)):
            raise EigensolverError(f"lambda could not be computed along seed {r['seed']}")
        inc = np.diff(lam)
        worst = float(inc.min()) if inc.size else 0.0
        allowed = -slack * (1.0 + float(np.max(np.abs(lam))))
        per_seed.append({"seed": r["seed"], "status": r["status"], "lambda_start": float(lam[0]),
                         "lambda_end": float(lam[-1]), "min_increment": worst})
        ok = ok and worst >= allowed
        n = len(cols["t"])
        table["seed"].extend([r["seed"]] * n)
        for k in ("t", "lambda", "l2_dist", "sup_dist", "ref_index"):
            table[k].extend(cols[k])
    out.tables["trace.csv"] = table
    out.summary["runs"] = per_seed
    out.checks["lambda_nondecreasing"] = ok
    return out


def run_gauge_transfer(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    out = Outcome("gauge-transfer")
    grid = build_grid(cfg)
    g0 = MetricField.flat(grid)
    g_init = initial_metric(cfg, grid)
    fcfg = flow_config(cfg, g0, flow_kind=FlowKind.DETURCK, record_lambda=True)
    trace = evolve(g_init, fcfg)
    window = (cfg.get("flow", "fit_start"), fcfg.t_end)
    res = gauge_transfer_check(trace, g_init, fcfg, window=window,
                               invariant_tol=_tol(cfg, "invariant_tol"), rate_tol=_tol(cfg, "rate_tol"))
    ricci = res.pop("ricci_trace", None)
    out.tables["trace.csv"] = trace.columns()
    out.tables["invariants.csv"] = trace.invariant_columns()
    if ricci is not None:
        out.tables["trace_ricci.csv"] = ricci.columns()
        out.tables["invariants_ricci.csv"] = ricci.invariant_columns()
    out.summary.update(res)
    out.summary["status"] = trace.status
    for key in ("lambda_ok", "volume_ok", "rate_ok", "ricci_envelope_ok"):
        out.checks[key] = bool(res.get(key, False))
    out.checks["both_flows_completed"] = trace.status == COMPLETED and (
        ricci is not None and ricci.status == COMPLETED)
    return out


RUNNERS = {
    "curvature": run_curvature,
    "lambda": run_lambda,
    "spectrum": run_spectrum,
    "decompose": run_decompose,
    "secondvar": run_secondvar,
    "flow": run_flow,
    "stability": run_stability,
    "monotonicity": run_monotonicity,
    "gauge-transfer": run_gauge_transfer,
}


# ---------------------------------------------------------------------------
# artifacts


def execute(cfg: ExperimentConfig, jobs: int = 1) -> Outcome:
    """Run the configured experiment; solver failures become an outcome, not an exception."""
    try:
        return RUNNERS[cfg.experiment](cfg, jobs)
    except SOLVER_ERRORS as exc:
        out = Outcome(cfg.experiment, summary={"error": f"{type(exc).__name__}: {exc}"})
        out.solver_failure = str(exc)
        return out


def write_outcome(out_dir, cfg: ExperimentConfig, outcome: Outcome) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.ini").write_text(cfg.echo())
    for name, cols in outcome.tables.items():
        write_columns(out_dir / name, cols)
    if outcome.snapshots:
        snap = out_dir / "snapshots"
        snap.mkdir(exist_ok=True)
        for stem, f in outcome.snapshots.items():
            write_snapshot(snap / f"{stem}.rsl", f)
    summary = {"experiment": outcome.experiment,
               "seed": cfg.get("perturbation", "seed"),
               "grid": {k: v for k, v in cfg.section("grid").items()},
               "checks": outcome.checks,
               "passed": outcome.exit_code == EXIT_OK,
               "exit_code": outcome.exit_code,
               "solver_failure": outcome.solver_failure,
               "results": outcome.summary}
    write_json(out_dir / "summary.json", summary)


def run_experiment(cfg: ExperimentConfig, out_dir, jobs: int = 1) -> int:
    """Run, write artifacts to ``out_dir`` and return the exit code."""
    outcome = execute(cfg, jobs)
    write_outcome(out_dir, cfg, outcome)
    for name, ok in outcome.checks.items():
        log.info("%-32s %s", name, "pass" if ok else "FAIL")
    if outcome.solver_failure:
        log.error("solver failure: %s", outcome.solver_failure)
    return outcome.exit_code
