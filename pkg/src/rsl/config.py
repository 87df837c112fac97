"""Experiment configuration: INI files with closed-world validation.

Every section and key is declared in :data:`SCHEMA`; anything else is an
error.  The resolved configuration (defaults filled in, overrides applied)
is written back out with each run so that re-running the echo reproduces
the run.
"""

from __future__ import annotations

import configparser
import math
import os
import re
from dataclasses import dataclass, field
from pathlib import Path

EXPERIMENTS = (
    "curvature", "lambda", "spectrum", "decompose", "secondvar",
    "flow", "stability", "monotonicity", "gauge-transfer",
)


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


_PI_EXPR = re.compile(r"^\s*(?:([0-9.eE+-]+)\s*\*\s*)?pi\s*(?:/\s*([0-9.eE+-]+))?\s*$")


def _parse_length(s: str) -> float:
    """A float, or ``pi`` optionally scaled: ``2*pi``, ``pi/2``."""
    m = _PI_EXPR.match(s)
    if m:
        num = float(m.group(1)) if m.group(1) else 1.0
        den = float(m.group(2)) if m.group(2) else 1.0
        return num * math.pi / den
    return float(s)


def _parse_lengths(s: str) -> tuple:
    return tuple(_parse_length(p) for p in s.split(",") if p.strip())


def _parse_floats(s: str) -> tuple:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _optional_float(s: str):
    return None if s.strip().lower() in ("", "none") else float(s)


def _optional_int(s: str):
    if s.strip().lower() in ("", "none"):
        return None
    v = int(s)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


def _choice(*options):
    def parse(s):
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v
    return parse


def _positive_int(s):
    v = int(s)
    if v < 1:
        raise ValueError("must be a positive integer")
    return v


# section -> key -> (parser, default)
SCHEMA = {
    "experiment": {
        "name": (_choice(*EXPERIMENTS), None),
        "runs": (_positive_int, 1),
        "k": (_optional_int, None),
    },
    "grid": {
        "dim": (int, 2),
        "points": (int, 32),
        "lengths": (_parse_lengths, (2 * math.pi,)),
        "order": (int, 2),
    },
    "perturbation": {
        "seed": (int, 0),
        "max_wavenumber": (int, 2),
        "amplitude": (float, 1e-2),
        "mode": (_choice("band", "single", "conformal", "gauge", "shift", "none"), "band"),
        "shift": (_parse_floats, ()),
        "zero_mean": (_parse_bool, False),
        "component": (_parse_floats, ()),
    },
    "flow": {
        "kind": (_choice("Ricci", "DeTurck"), "DeTurck"),
        "dt_safety": (float, 0.5),
        "dt": (_optional_float, None),
        "t_end": (float, 10.0),
        "record_every": (_positive_int, 10),
        "reference_update_period": (_optional_float, None),
        "record_lambda": (_parse_bool, False),
        "fit_start": (float, 1.0),
    },
    "tolerances": {
        "eig_tol": (_optional_float, None),
        "flat_tol": (float, 1e-12),
        "lambda_flat_tol": (float, 1e-8),
        "critical_tol": (float, 1e-6),
        "consistency_tol": (float, 1e-3),
        "symmetry_tol": (float, 1e-10),
        "secondvar_tol": (float, 1e-3),
        "refinement_factor": (float, 2.0),
        "null_tol": (float, 1e-8),
        "gap_tol": (float, 1e-4),
        "decomposition_tol": (float, 1e-8),
        "monotonicity_slack": (float, 1e-8),
        "single_mode_rate_tol": (float, 0.05),
        "generic_rate_fraction": (float, 0.95),
        "zero_mode_tol": (float, 1e-12),
        "update_ratio_bound": (_optional_float, None),
        "weak_sup_tol": (float, 1e-6),
        "invariant_tol": (float, 1e-6),
        "rate_tol": (float, 0.10),
        "remainder_slope_tol": (float, 0.10),
    },
    "output": {
        "dir": (str, ""),
    },
}


@dataclass
class ExperimentConfig:
    experiment: str
    values: dict = field(default_factory=dict)  # section -> key -> parsed value
    raw: dict = field(default_factory=dict)  # section -> key -> string as given
    source: str | None = None

    def get(self, section: str, key: str):
        return self.values[section][key]

    def section(self, name: str) -> dict:
        return dict(self.values[name])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        values = {s: dict(v) for s, v in self.values.items()}
        raw = {s: dict(v) for s, v in self.raw.items()}
        values["perturbation"]["seed"] = int(seed)
        raw["perturbation"]["seed"] = str(int(seed))
        return ExperimentConfig(self.experiment, values, raw, self.source)

    def echo(self) -> str:
        """INI text of the fully resolved configuration."""
        lines = []
        for section, keys in SCHEMA.items():
            lines.append(f"[{section}]")
            for key in keys:
                lines.append(f"{key} = {self.raw[section][key]}")
            lines.append("")
        return "\n".join(lines)


def _default_text(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_config_text(text: str, experiment: str | None = None, source: str | None = None) -> ExperimentConfig:
    """Parse and validate INI text.

    Raises
    ------
    ConfigError
        Unknown sections or keys, unparsable values, or an experiment name
        that contradicts ``experiment``.
    """
    cp = configparser.ConfigParser(interpolation=None, default_section="__no_defaults__")
    cp.optionxform = str
    try:
        cp.read_string(text, source=source or "<config>")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    for section in cp.sections():
        if section not in SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in [{section}]")
    values, raw = {}, {}
    for section, keys in SCHEMA.items():
        values[section], raw[section] = {}, {}
        for key, (parser, default) in keys.items():
            if cp.has_option(section, key):
                text_value = cp.get(section, key).strip()
                try:
                    values[section][key] = parser(text_value)
                except ValueError as exc:
                    raise ConfigError(f"[{section}] {key}: {exc}") from exc
                raw[section][key] = text_value
            else:
                values[section][key] = default
                raw[section][key] = _default_text(default)
    name = values["experiment"]["name"]
    if experiment is not None:
        if experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment '{experiment}'")
        if name is not None and name != experiment:
            raise ConfigError(f"config is for experiment '{name}', not '{experiment}'")
        name = experiment
    if name is None:
        raise ConfigError("no experiment named")
    values["experiment"]["name"] = name
    raw["experiment"]["name"] = name
    _validate(values)
    return ExperimentConfig(name, values, raw, source)


def _validate(values: dict) -> None:
    g = values["grid"]
    if g["dim"] not in (2, 3):
        raise ConfigError("[grid] dim must be 2 or 3")
    if g["points"] < 8:
        raise ConfigError("[grid] points must be at least 8")
    if g["order"] not in (2, 4, 6):
        raise ConfigError("[grid] order must be 2, 4 or 6")
    if len(g["lengths"]) not in (1, g["dim"]) or any(L <= 0 for L in g["lengths"]):
        raise ConfigError("[grid] lengths: one positive value or one per axis")
    p = values["perturbation"]
    if p["amplitude"] < 0:
        raise ConfigError("[perturbation] amplitude must be non-negative")
    if 2 * p["max_wavenumber"] >= g["points"]:
        raise ConfigError("[perturbation] max_wavenumber must stay below Nyquist")
    ncomp = g["dim"] * (g["dim"] + 1) // 2
    for key in ("shift", "component"):
        if p[key] and len(p[key]) != ncomp:
            raise ConfigError(f"[perturbation] {key} needs {ncomp} packed components")
    f = values["flow"]
    if not 0 < f["dt_safety"] <= 1:
        raise ConfigError("[flow] dt_safety must lie in (0, 1]")
    if f["t_end"] < 0:
        raise ConfigError("[flow] t_end must be non-negative")
    if f["reference_update_period"] is not None and f["reference_update_period"] <= 0:
        raise ConfigError("[flow] reference_update_period must be positive")
    if f["dt"] is not None and f["dt"] <= 0:
        raise ConfigError("[flow] dt must be positive")


def load_config(path, experiment: str | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, experiment, str(path))


def resolve_output_dir(cli_out: str | None, cfg: ExperimentConfig) -> Path:
    """``--out``, then ``[output] dir``, then ``$RSL_OUT``, then ``./rsl_out``."""
    for candidate in (cli_out, cfg.get("output", "dir"), os.environ.get("RSL_OUT")):
        if candidate:
            return Path(candidate)
    return Path("rsl_out")
