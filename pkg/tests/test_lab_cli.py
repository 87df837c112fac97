import json
import math
import subprocess
import sys

import numpy as np
import pytest

from rsl import experiments
from rsl.cli import main
from rsl.compare import IncompatibleRunsError, compare_runs
from rsl.config import ConfigError, load_config, parse_config_text, resolve_output_dir
from rsl.io import read_columns
from rsl.spectral import SolverConvergenceError

SMALL_FLOW = """
[experiment]
name = flow

[grid]
dim = 2
points = 16
lengths = 2*pi
order = 2

[perturbation]
seed = 3
mode = band
amplitude = {amp}
max_wavenumber = 2

[flow]
kind = {kind}
t_end = {t_end}
record_every = 2
fit_start = 0.5
reference_update_period = 0.25
{extra}
"""


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def _flow_cfg(tmp_path, name="flow.ini", amp=1e-3, kind="DeTurck", t_end=4.0, extra=""):
    return _write(tmp_path, name, SMALL_FLOW.format(amp=amp, kind=kind, t_end=t_end, extra=extra))


def _summary(d):
    return json.loads((d / "summary.json").read_text())


# ---------------------------------------------------------------------------
# configuration


def test_unknown_section_and_key_rejected():
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config_text("[experiment]\nname = flow\n[grdi]\ndim = 2\n")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config_text("[experiment]\nname = flow\n[grid]\npoints_per_axis = 16\n")


@pytest.mark.parametrize("text", [
    "[experiment]\nname = flow\n[grid]\ndim = 4\n",
    "[experiment]\nname = flow\n[grid]\norder = 3\n",
    "[experiment]\nname = flow\n[grid]\npoints = 16\n[perturbation]\nmax_wavenumber = 8\n",
    "[experiment]\nname = flow\n[flow]\ndt_safety = 1.5\n",
    "[experiment]\nname = flow\n[flow]\nrecord_lambda = maybe\n",
    "[experiment]\nname = flow\n[perturbation]\nshift = 1.0, 2.0\n",
    "[experiment]\nname = telescope\n",
    "[grid]\ndim = 2\n",
])
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_experiment_name_must_agree_with_command():
    with pytest.raises(ConfigError):
        parse_config_text("[experiment]\nname = flow\n", experiment="lambda")
    cfg = parse_config_text("[grid]\ndim = 3\n", experiment="lambda")
    assert cfg.experiment == "lambda"


def test_lengths_accept_pi_expressions():
    cfg = parse_config_text("[experiment]\nname = flow\n[grid]\nlengths = 2*pi, pi/2\n")
    assert cfg.get("grid", "lengths") == (2 * math.pi, math.pi / 2)


def test_echo_roundtrip(tmp_path):
    cfg = load_config(_flow_cfg(tmp_path, extra="record_lambda = true"))
    again = parse_config_text(cfg.echo())
    assert again.values == cfg.values
    assert again.echo() == cfg.echo()
    seeded = cfg.with_seed(11)
    assert parse_config_text(seeded.echo()).get("perturbation", "seed") == 11


def test_output_dir_resolution(tmp_path, monkeypatch):
    cfg = parse_config_text("[experiment]\nname = flow\n[output]\ndir = from_config\n")
    monkeypatch.setenv("RSL_OUT", str(tmp_path / "env"))
    assert str(resolve_output_dir("cli", cfg)) == "cli"
    assert str(resolve_output_dir(None, cfg)) == "from_config"
    bare = parse_config_text("[experiment]\nname = flow\n")
    assert resolve_output_dir(None, bare) == tmp_path / "env"
    monkeypatch.delenv("RSL_OUT")
    assert str(resolve_output_dir(None, bare)) == "rsl_out"


# ---------------------------------------------------------------------------
# runs and exit codes


def test_config_error_exit_code(tmp_path, capsys):
    bad = _write(tmp_path, "bad.ini", "[experiment]\nname = flow\n[grid]\nbogus = 1\n")
    assert main(["flow", "--config", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert main(["flow", "--config", str(tmp_path / "missing.ini")]) == 3
    assert main(["lambda", "--config", str(bad)]) == 3
    with pytest.raises(SystemExit) as exc:
        main(["nonsense"])
    assert exc.value.code == 3


def test_flow_run_writes_artifacts(tmp_path):
    out = tmp_path / "run"
    code = main(["flow", "--config", str(_flow_cfg(tmp_path)), "--out", str(out)])
    assert code == 0
    for name in ("config.ini", "summary.json", "trace.csv", "invariants.csv",
                 "snapshots/final_metric.rsl"):
        assert (out / name).exists(), name
    s = _summary(out)
    assert s["passed"] and s["exit_code"] == 0
    assert s["results"]["status"] == "completed"
    cols = read_columns(out / "trace.csv")
    assert list(cols) == ["t", "lambda", "l2_dist", "sup_dist", "ref_index"]


def test_rsl_out_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("RSL_OUT", str(tmp_path / "envout"))
    assert main(["flow", "--config", str(_flow_cfg(tmp_path))]) == 0
    assert (tmp_path / "envout" / "summary.json").exists()


def test_oversized_perturbation_leaves_neighbourhood(tmp_path):
    out = tmp_path / "big"
    code = main(["flow", "--config", str(_flow_cfg(tmp_path, amp=1.5)), "--out", str(out)])
    assert code == 1
    s = _summary(out)
    assert s["results"]["status"] == "left neighbourhood"
    assert s["results"]["failure_time"] == 0.0
    assert s["checks"]["stayed_in_neighbourhood"] is False


def test_unstable_fixed_step_reports_failure_time(tmp_path):
    out = tmp_path / "blow"
    cfg = _flow_cfg(tmp_path, amp=0.3, t_end=50.0, extra="dt = 0.5")
    assert main(["flow", "--config", str(cfg), "--out", str(out)]) == 1
    s = _summary(out)
    assert s["results"]["status"] == "left neighbourhood"
    assert s["results"]["failure_time"] > 0


def test_monotonicity_with_zero_amplitude(tmp_path):
    cfg = _write(tmp_path, "m.ini", """
[experiment]
name = monotonicity
runs = 2
[grid]
points = 16
[perturbation]
amplitude = 0
[flow]
kind = Ricci
t_end = 0.3
record_every = 5
""")
    out = tmp_path / "mono"
    assert main(["monotonicity", "--config", str(cfg), "--out", str(out)]) == 0
    lam = read_columns(out / "trace.csv")["lambda"]
    assert np.all(np.isfinite(lam))
    assert np.ptp(lam) == 0.0


def test_inconclusive_verdict_is_solver_exit(tmp_path):
    cfg = _write(tmp_path, "s.ini", """
[experiment]
name = stability
[grid]
points = 12
[tolerances]
eig_tol = 2.0
""")
    out = tmp_path / "stab"
    assert main(["stability", "--config", str(cfg), "--out", str(out)]) == 2
    assert _summary(out)["results"]["verdict"] == "Inconclusive"


def test_solver_failure_maps_to_exit_two(tmp_path, monkeypatch):
    def boom(cfg, jobs=1):
        raise SolverConvergenceError("cg did not converge")
    monkeypatch.setitem(experiments.RUNNERS, "decompose", boom)
    cfg = _write(tmp_path, "d.ini", "[experiment]\nname = decompose\n")
    out = tmp_path / "dec"
    assert main(["decompose", "--config", str(cfg), "--out", str(out)]) == 2
    assert "cg did not converge" in _summary(out)["solver_failure"]


def test_entry_point_subprocess(tmp_path):
    cfg = _write(tmp_path, "c.ini", "[experiment]\nname = curvature\n[grid]\npoints = 16\n"
                                    "[perturbation]\nmode = none\n")
    res = subprocess.run([sys.executable, "-m", "rsl.cli", "curvature", "--config", str(cfg),
                          "--out", str(tmp_path / "cur")], capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert _summary(tmp_path / "cur")["checks"]["flat_certificate"] is True


# ---------------------------------------------------------------------------
# reproducibility and comparison


def _csv_bytes(d):
    return {p.name: p.read_bytes() for p in sorted(d.glob("*.csv"))}


def test_rerun_and_echo_reproduce_bytes(tmp_path):
    cfg = _flow_cfg(tmp_path)
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert main(["flow", "--config", str(cfg), "--out", str(a), "--seed", "5"]) == 0
    assert main(["flow", "--config", str(cfg), "--out", str(b), "--seed", "5"]) == 0
    assert main(["flow", "--config", str(a / "config.ini"), "--out", str(c)]) == 0
    assert _csv_bytes(a) == _csv_bytes(b) == _csv_bytes(c)
    assert (a / "summary.json").read_bytes() == (c / "summary.json").read_bytes()


def test_parallel_sweep_matches_serial(tmp_path):
    cfg = _write(tmp_path, "m.ini", """
[experiment]
name = monotonicity
runs = 3
[grid]
points = 16
[perturbation]
amplitude = 0.01
[flow]
kind = Ricci
t_end = 0.2
record_every = 5
""")
    assert main(["monotonicity", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert main(["monotonicity", "--config", str(cfg), "--out", str(tmp_path / "p"), "--jobs", "2"]) == 0
    assert _csv_bytes(tmp_path / "s") == _csv_bytes(tmp_path / "p")


def test_compare_against_itself(tmp_path):
    out = tmp_path / "r"
    assert main(["flow", "--config", str(_flow_cfg(tmp_path)), "--out", str(out)]) == 0
    rep = compare_runs(out, out)
    assert rep["max_relative_deviation"] == 0.0
    assert rep["files"]["trace.csv"]["matched_times"] == len(read_columns(out / "trace.csv")["t"])


def test_compare_amplitude_continuation(tmp_path):
    extra = "dt = 0.02"
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["flow", "--config", str(_flow_cfg(tmp_path, "a.ini", amp=1e-3, t_end=4.0, extra=extra)),
                 "--out", str(a)]) == 0
    assert main(["flow", "--config", str(_flow_cfg(tmp_path, "b.ini", amp=5e-4, t_end=4.0, extra=extra)),
                 "--out", str(b)]) == 0
    stats = compare_runs(a, b)["files"]["trace.csv"]["columns"]["sup_dist"]
    assert 1.8 <= stats["ratio_min"] <= stats["ratio_max"] <= 2.2


def test_compare_ricci_and_deturck_lambda(tmp_path):
    extra = "dt = 0.02\nrecord_lambda = true"
    a, b = tmp_path / "ricci", tmp_path / "deturck"
    assert main(["flow", "--config", str(_flow_cfg(tmp_path, "r.ini", amp=1e-2, kind="Ricci", extra=extra)),
                 "--out", str(a)]) == 0
    assert main(["flow", "--config", str(_flow_cfg(tmp_path, "d.ini", amp=1e-2, kind="DeTurck", extra=extra)),
                 "--out", str(b)]) == 0
    lam = compare_runs(a, b)["files"]["trace.csv"]["columns"]["lambda"]
    assert lam["max_abs_deviation"] <= 1e-6


def test_compare_rejects_incompatible_runs(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["flow", "--config", str(_flow_cfg(tmp_path)), "--out", str(a)]) == 0
    other = _flow_cfg(tmp_path, "o.ini").read_text().replace("points = 16", "points = 24")
    assert main(["flow", "--config", str(_write(tmp_path, "o.ini", other)), "--out", str(b)]) == 0
    with pytest.raises(IncompatibleRunsError):
        compare_runs(a, b)
    assert main(["compare", str(a), str(b)]) == 3
    assert main(["compare", str(a), str(a), "--out", str(tmp_path / "rep.json")]) == 0
    assert json.loads((tmp_path / "rep.json").read_text())["max_relative_deviation"] == 0.0
