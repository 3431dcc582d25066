"""Unitary time-dependent perturbation theories for a pulse-driven two-level system.

The package compares operator-ordering expansions (Magnus, Dyson and the
unitary PVZ / Van Vleck variants) with KAM iterations whose free anchoring
times can be tuned by minimizing a computable remainder diagnostic.
"""

from .harness import (ErrorReport, ExperimentSpec, SchemeSpec, compute_errors, figure_preset,
                      propagate, run_experiment)
from .kam import (GDiagnostic, KamConfig, g_operator, interaction_rep_kam, kam_propagator)
from .ooexpand import (OOConfig, dyson_propagator, magnus_propagator, magnus_terms,
                       oo_propagator, pvz_propagator, vanvleck_propagator)
from .optimize import ScanGrid, minimize_g, scan_g
from .oracle import SolverSpec, reference_propagator, transition_probability
from .quad import QuadratureSpec
from .system import PulseShape, PulseSystem

__all__ = [
    "ErrorReport", "ExperimentSpec", "GDiagnostic", "KamConfig", "OOConfig", "PulseShape",
    "PulseSystem", "QuadratureSpec", "ScanGrid", "SchemeSpec", "SolverSpec", "compute_errors",
    "dyson_propagator", "figure_preset", "g_operator", "interaction_rep_kam", "kam_propagator",
    "magnus_propagator", "magnus_terms", "minimize_g", "oo_propagator", "propagate",
    "pvz_propagator", "reference_propagator", "run_experiment", "scan_g",
    "transition_probability", "vanvleck_propagator",
]
