"""Reference propagator from direct integration of the Schrodinger equation.

A Dormand-Prince 5(4) pair with standard step-size control integrates
``i dU/dt = H(t) U`` from ``U(t0) = I``. The accepted step sequence is kept
so that a second pass with every step halved gives an error estimate (and a
convergence-order check) for the raw, non-reunitarized result.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .linalg import spectral_norm, unitarity_defect

# Dormand-Prince tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4


class OracleError(RuntimeError):
    """Step size underflow in the reference integrator."""


@dataclass(frozen=True)
class SolverSpec:
    rel_tol: float = 1e-12
    abs_tol: float = 1e-13
    max_step: float | None = None

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("solver tolerances must be positive")
        if self.max_step is not None and self.max_step <= 0:
            raise ValueError("max_step must be positive")


@dataclass(frozen=True)
class ReferenceResult:
    U: np.ndarray
    unitarity_defect: float
    step_count: int
    error_estimate: float
    steps: np.ndarray | None = None


def _dp_step(f, t, y, h, k1):
    ks = [k1]
    for i in range(1, 7):
        yi = y + h * sum(a * k for a, k in zip(_A[i], ks))
        ks.append(f(t + _C[i] * h, yi))
    y_new = y + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
    err = h * sum(e * k for e, k in zip(_E, ks))
    return y_new, err, ks[-1]


def _adaptive(f, t0, t1, y, spec: SolverSpec, max_step: float):
    steps = [t0]
    t = t0
    k1 = f(t, y)
    span = t1 - t0
    h = min(max_step, span, 0.01 * span)
    h_min = 1e-14 * max(1.0, abs(t1))
    while t < t1:
        h = min(h, t1 - t)
        y_new, err, k_last = _dp_step(f, t, y, h, k1)
        scale = spec.abs_tol + spec.rel_tol * np.maximum(np.abs(y), np.abs(y_new))
        e = np.sqrt(np.mean(np.abs(err / scale) ** 2))
        if e <= 1.0:
            t = t + h if t1 - t > h else t1
            y = y_new
            k1 = k_last
            steps.append(t)
        fac = 5.0 if e == 0 else min(5.0, max(0.2, 0.9 * e ** -0.2))
        if e > 1.0:
            fac = min(fac, 1.0)
        h = min(max_step, h * fac)
        if h < h_min:
            raise OracleError(f"step size underflow at t={t:.6g}")
    return y, steps


def _fixed(f, steps, y):
    for a, b in zip(steps[:-1], steps[1:]):
        y, _, _ = _dp_step(f, a, y, b - a, f(a, y))
    return y


def _rhs(system):
    X = system.coupling
    Y = system.epsilon * system.static
    pulse = system.pulse
    d = system.dim

    def f(t, y):
        H = float(pulse.omega(t)) * X + Y
        return (-1j * (H @ y.reshape(d, d))).ravel()

    return f


def _segments(system, t0: float, t: float) -> list[float]:
    pts = [t0, t] + [b for b in system.support if t0 < b < t]
    return sorted(pts)


def reference_propagator(system, t0: float, t: float, spec: SolverSpec = SolverSpec(),
                         estimate_error: bool = True) -> ReferenceResult:
    """Integrate ``i dU/dt = [Omega X + eps Y] U`` from ``U(t0) = I`` to ``t``.

    The result is returned raw (never reunitarized). With ``estimate_error``
    the accepted step sequence is replayed with every step halved and the
    difference is reported as ``error_estimate``.
    """
    if t < t0:
        raise ValueError("reference_propagator requires t0 <= t")
    d = system.dim
    f = _rhs(system)
    ti, tf = system.support
    max_step = spec.max_step if spec.max_step is not None else (tf - ti) / 50
    y = np.eye(d, dtype=complex).ravel()
    all_steps = [t0]
    pts = _segments(system, t0, t)
    for a, b in zip(pts[:-1], pts[1:]):
        y, steps = _adaptive(f, a, b, y, spec, max_step)
        all_steps.extend(steps[1:])
    U = y.reshape(d, d)
    steps = np.array(all_steps)
    err = float("nan")
    if estimate_error:
        fine = np.empty(2 * steps.size - 1)
        fine[0::2] = steps
        fine[1::2] = 0.5 * (steps[:-1] + steps[1:])
        U_half = _fixed(f, fine, np.eye(d, dtype=complex).ravel()).reshape(d, d)
        err = spectral_norm(U - U_half)
    return ReferenceResult(U=U, unitarity_defect=unitarity_defect(U),
                           step_count=steps.size - 1, error_estimate=err, steps=steps)


def fixed_step_propagator(system, steps: np.ndarray) -> np.ndarray:
    """Dormand-Prince 5th-order solution on a prescribed step sequence."""
    d = system.dim
    return _fixed(_rhs(system), np.asarray(steps, dtype=float),
                  np.eye(d, dtype=complex).ravel()).reshape(d, d)


def transition_probability(U: np.ndarray) -> float:
    """``|<+|U|->|^2`` with ``|+> = (1, 0)`` and ``|-> = (0, 1)``."""
    U = np.asarray(U)
    if U.shape != (2, 2):
        raise ValueError("transition probability is defined for 2x2 propagators")
    return float(abs(U[0, 1]) ** 2)
