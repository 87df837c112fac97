"""Numerical lab for the stability of flat metrics under Ricci flow on tori.

Modules
-------
grid
    Periodic grids, tensor fields, difference stencils and inner products.
curvature
    Christoffel symbols, curvature tensors, tensor calculus and flow right-hand sides.
spectral
    The entropy ``lambda``, its variations, Lichnerowicz spectra, tensor splitting
    and stability verdicts.
flows
    Ricci and Ricci-DeTurck time stepping, reference updates and decay diagnostics.
experiments, cli
    Config-driven experiment runs behind the ``rsl`` command.
"""

from .curvature import curvature_of, lichnerowicz_apply
from .flows import FlowConfig, FlowKind, FlowTrace, evolve, fit_decay_rate, reference_update
from .grid import GridSpec, MetricField, ScalarField, SymTensorField, VectorField
from .kernels import BACKEND
from .spectral import (
    Verdict,
    decompose,
    first_variation_lambda,
    lambda_of,
    lichnerowicz_spectrum,
    second_variation_L,
    stability_verdict,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "FlowConfig",
    "FlowKind",
    "FlowTrace",
    "GridSpec",
    "MetricField",
    "ScalarField",
    "SymTensorField",
    "VectorField",
    "Verdict",
    "curvature_of",
    "decompose",
    "evolve",
    "first_variation_lambda",
    "fit_decay_rate",
    "lambda_of",
    "lichnerowicz_apply",
    "lichnerowicz_spectrum",
    "reference_update",
    "second_variation_L",
    "stability_verdict",
]
