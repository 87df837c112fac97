"""Acceptance suite: one test per criterion, run on the shipped configs.

Each test appends a ``PASS``/``FAIL`` line with its measured numbers to
``conftest.ACCEPTANCE_LINES`` before asserting; the lines are printed in a
separate section of the terminal summary.
"""

import configparser
import io
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from rsl.config import parse_config_text
from rsl.curvature import curvature_of
from rsl.experiments import execute, run_experiment
from rsl.grid import GridSpec, MetricField, SymTensorField
from rsl.spectral import lambda_of

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _config(name, **overrides):
    """Shipped config ``name`` with ``section__key=value`` overrides."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    cp.read(CONFIGS / f"{name}.ini")
    for dotted, value in overrides.items():
        section, key = dotted.split("__")
        if not cp.has_section(section):
            cp.add_section(section)
        cp.set(section, key, str(value))
    buf = io.StringIO()
    cp.write(buf)
    return parse_config_text(buf.getvalue())


def _record(label, ok, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    return ok


def _checks_line(outcome, keys):
    return ", ".join(f"{k}={outcome.checks.get(k)}" for k in keys)


@pytest.fixture(scope="module")
def band_flow():
    cfg = _config("flow", tolerances__update_ratio_bound=1.0)
    return execute(cfg)


# ---------------------------------------------------------------------------


def test_flat_metric_certificate():
    grid = GridSpec(2, 32, 2 * np.pi, 2)
    sheared = SymTensorField(grid, np.broadcast_to(np.array([1.3, 0.2, 0.8]), (32, 32, 3)).copy())
    worst, worst_lam, slowest = 0.0, 0.0, 0.0
    for g in (MetricField.flat(grid), MetricField(grid, sheared.data)):
        t0 = time.perf_counter()
        pack = curvature_of(g)
        lam, _ = lambda_of(g)
        slowest = max(slowest, time.perf_counter() - t0)
        worst = max(worst, max(pack.sup_norms().values()))
        worst_lam = max(worst_lam, abs(lam))
    ok = worst <= 1e-12 and worst_lam <= 1e-8 and slowest < 5.0
    _record("flat metric certificate", ok,
            f"max curvature sup {worst:.1e}, |lambda| {worst_lam:.1e}, {slowest:.2f} s")
    assert ok


def test_flat_metric_is_critical_point():
    cfg = _config("lambda", experiment__runs=100, perturbation__mode="none")
    out = execute(cfg)
    worst = out.summary["max_first_variation_ratio"]
    ok = out.checks.get("critical_point") is True and worst <= 1e-6
    _record("flat metric is a critical point of lambda", ok,
            f"max |dlambda(h)|/|h| over 100 directions {worst:.1e}")
    assert ok


def test_second_variation_matches_finite_difference():
    out = execute(_config("secondvar"))
    s = out.summary
    ok = out.checks["matches_finite_difference"] and out.checks["error_shrinks_under_refinement"]
    _record("second variation vs finite difference of lambda", ok,
            f"max rel error {s['max_relative_error_coarse']:.1e} at N=32, "
            f"{s['max_relative_error_fine']:.1e} at N=64, min shrink {s['min_refinement_ratio']:.1f}x")
    assert ok


def test_gauge_and_scale_are_null_directions():
    worst = {}
    for seed in range(5):
        out = execute(_config("secondvar", experiment__runs=1, perturbation__seed=seed))
        for k, v in out.summary["null_direction_ratios"].items():
            worst[k] = max(worst.get(k, 0.0), v)
    ok = max(worst.values()) <= 1e-8
    _record("gauge and scale directions are null for L", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


def test_flat_three_torus_spectral_gap():
    t0 = time.perf_counter()
    out = execute(_config("stability"))
    elapsed = time.perf_counter() - t0
    gap = out.summary["gap_two_delta"]
    kernel = out.summary["kernel_dimension"]
    ok = (gap is not None and abs(gap - 1.0) <= 1e-4 and kernel == 6
          and out.summary["verdict"] == "LinearlyStable" and elapsed < 60.0)
    _record("flat T^3 spectral gap", ok,
            f"gap {gap:.8f}, kernel {kernel}, verdict {out.summary['verdict']}, {elapsed:.1f} s")
    assert ok


def test_lambda_nondecreasing_along_ricci_flow():
    out = execute(_config("monotonicity"))
    runs = out.summary["runs"]
    worst = min(r.get("min_increment", -np.inf) for r in runs)
    ok = out.checks["lambda_nondecreasing"] and len(runs) == 10
    _record("lambda nondecreasing along Ricci flow", ok,
            f"{len(runs)} runs, smallest increment {worst:.1e}")
    assert ok


def test_kernel_killing_update(band_flow):
    s = band_flow.summary
    ok = band_flow.checks.get("zero_modes_removed") is True and band_flow.checks.get("update_ratio_bounded") is True
    _record("reference update removes zero modes", ok,
            f"max zero-mode projection {s.get('max_zero_mode_projection', float('nan')):.1e}, "
            f"update ratio {s.get('update_ratio', float('nan')):.8f} <= 1.0")
    assert ok


def test_exponential_decay_rates(band_flow):
    single = execute(_config("flow_single_mode"))
    r1, r2 = single.summary.get("decay_rate"), band_flow.summary.get("decay_rate")
    gap = band_flow.summary.get("gap_two_delta")
    ok = single.checks.get("single_mode_rate") is True and band_flow.checks.get("generic_rate_above_gap") is True
    _record("exponential decay rates", ok,
            f"single mode rate {r1:.4f} (expect 1 +- 5%), generic rate {r2:.4f} vs gap {gap:.4f}")
    assert ok


def test_weak_stability_converges_to_shifted_metric():
    out = execute(_config("flow_shifted"))
    sup = out.summary.get("sup_distance_to_shifted_metric", float("nan"))
    ok = out.checks.get("converged_to_shifted_metric") is True and out.checks["stayed_in_neighbourhood"]
    _record("flow from shifted data converges to the shifted constant metric", ok,
            f"sup distance {sup:.1e} at t={out.summary.get('t_final')}")
    assert ok


def test_remainder_is_quadratic(band_flow):
    slope = band_flow.summary.get("remainder_slope")
    ok = band_flow.checks.get("remainder_quadratic") is True
    _record("nonlinear remainder is quadratic", ok, f"log-log slope {slope:.4f}")
    assert ok


def test_gauge_transfer_between_flows():
    out = execute(_config("gauge_transfer"))
    s = out.summary
    ok = out.exit_code == 0
    _record("Ricci and DeTurck flows agree on invariants", ok,
            f"lambda dev {s.get('lambda_max_deviation', float('nan')):.1e}, "
            f"volume dev {s.get('volume_max_relative_deviation', float('nan')):.1e}, "
            f"Ricci decay rates {s.get('ricci_rate_deturck', float('nan')):.4f} / "
            f"{s.get('ricci_rate_ricci', float('nan')):.4f}; "
            + _checks_line(out, ("lambda_ok", "volume_ok", "rate_ok")))
    assert ok


def test_reruns_are_byte_identical(tmp_path):
    cases = [
        ("lambda", {}, 1),
        ("decompose", {}, 1),
        ("spectrum", {}, 1),
        ("flow", {"flow__t_end": 3}, 1),
        ("monotonicity", {"experiment__runs": 3, "flow__t_end": 1}, 2),
    ]
    differing = []
    for name, over, jobs in cases:
        cfg = _config(name, **over)
        for tag in ("a", "b"):
            run_experiment(cfg, tmp_path / f"{name}_{tag}", jobs=jobs if tag == "b" else 1)
        files = sorted(p.name for p in (tmp_path / f"{name}_a").glob("*.csv"))
        assert files, name
        for f in files:
            if (tmp_path / f"{name}_a" / f).read_bytes() != (tmp_path / f"{name}_b" / f).read_bytes():
                differing.append(f"{name}/{f}")
    ok = not differing
    _record("re-runs produce byte-identical CSV", ok,
            f"{len(cases)} experiments compared" + (f", differing: {differing}" if differing else ""))
    assert ok
