"""Reference frames and time grids shared by the expansion schemes.

Every expansion here is evaluated in the interaction frame of its solvable
part anchored at a fixed reference time ``r`` (the start of the grid). A
:class:`Problem` supplies ``P(t) = U_unperturbed(t, r)`` and the perturbation
``V(t)``; integrals of ``P(u)^dagger V(u) P(u)`` then become plain running
integrals on a :class:`~pulsekam.quad.PanelGrid`.
"""

from __future__ import annotations

from functools import lru_cache
from typing import Iterable

import numpy as np

from .linalg import dagger, spectral_norm, unitary_exp
from .quad import PanelGrid, QuadratureError, QuadratureSpec
from .system import PulseSystem, u_h0


def system_key(system: PulseSystem) -> tuple:
    p = system.pulse
    params = tuple(sorted((k, np.asarray(v).tobytes()) for k, v in p.params.items()))
    return (p.form, p.area, p.support, params, system.epsilon,
            system.coupling.tobytes(), system.static.tobytes())


class Problem:
    """Solvable propagator plus perturbation, viewed from reference time ``r``."""

    dim: int
    r: float

    def frame(self, t) -> np.ndarray:
        """``P(t) = U(t, r)`` for an array of times."""
        raise NotImplementedError

    def perturbation(self, t) -> np.ndarray:
        raise NotImplementedError

    def propagator(self, t, s) -> np.ndarray:
        return self.frame(t) @ dagger(self.frame(s))


class SystemProblem(Problem):
    """``H0 = Omega(t) X`` with perturbation ``Y`` (the sudden identification)."""

    def __init__(self, system: PulseSystem, r: float):
        self.system = system
        self.r = float(r)
        self.dim = system.dim

    def frame(self, t):
        return u_h0(self.system, t, self.r)

    def perturbation(self, t):
        return self.system.v1(t)

    def propagator(self, t, s):
        return u_h0(self.system, t, s)


class InteractionProblem(Problem):
    """Zero solvable part and perturbation ``U0(s, t) Y U0(t, s)``."""

    def __init__(self, system: PulseSystem, s: float, r: float):
        self.system = system
        self.s = float(s)
        self.r = float(r)
        self.dim = system.dim

    def frame(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.eye(self.dim, dtype=complex),
                               t.shape + (self.dim, self.dim)).copy()

    def perturbation(self, t):
        U = u_h0(self.system, self.s, t)
        return U @ self.system.static @ dagger(U)

    def propagator(self, t, s):
        shape = np.broadcast(np.asarray(t), np.asarray(s)).shape
        return self.frame(np.zeros(shape))


class ShiftedProblem(Problem):
    """Re-identified split ``H0' = H0 + eps D``, ``V' = V - D``.

    ``D(t) = U(t, t1) V(t1) U(t1, t)`` is covariant under the original
    solvable dynamics, so ``U'(t, s) = U(t, s) exp(-i (t - s) eps D(s))``.
    """

    def __init__(self, base: Problem, t1: float, epsilon: float):
        self.base = base
        self.t1 = float(t1)
        self.epsilon = float(epsilon)
        self.r = base.r
        self.dim = base.dim
        Pt1 = base.frame(self.t1)
        self.anchor = base.perturbation(self.t1)
        self.d_frame = dagger(Pt1) @ self.anchor @ Pt1

    def shift(self, t) -> np.ndarray:
        """``D(t)`` computed by direct conjugation from the anchor time."""
        t = np.asarray(t, dtype=float)
        U = self.base.propagator(t, np.full(t.shape, self.t1))
        return U @ self.anchor @ dagger(U)

    def frame(self, t):
        t = np.asarray(t, dtype=float)
        E = unitary_exp(np.multiply.outer((t - self.r) * self.epsilon, self.d_frame), check=False)
        return self.base.frame(t) @ E

    def perturbation(self, t):
        return self.base.perturbation(t) - self.shift(t)

    def propagator(self, t, s):
        t = np.asarray(t, dtype=float)
        s = np.asarray(s, dtype=float)
        gen = ((t - s) * self.epsilon)[..., None, None] * self.shift(s)
        return self.base.propagator(t, s) @ unitary_exp(gen, check=False)


def _probe_error(system: PulseSystem, panels: int, spec: QuadratureSpec) -> float:
    # Magnus-like running integrals of the rotating perturbation, including an
    # eps-rotation so that both time scales of the problem are resolved.
    ti, tf = system.support
    out = []
    for p in (panels, 2 * panels):
        grid = PanelGrid([ti, tf], p, spec.nodes)
        P = u_h0(system, grid.nodes, ti)
        R = unitary_exp(np.multiply.outer(grid.nodes - ti, max(system.epsilon, 1.0)
                                          * system.static), check=False)
        F = R @ P
        Vt = dagger(F) @ system.static @ F
        m1 = grid.cumulative(Vt).node_values
        m2 = grid.integrate(m1 @ Vt - Vt @ m1)
        out.append(np.concatenate([grid.integrate(Vt), m2]))
    return spectral_norm(out[1] - out[0])


@lru_cache(maxsize=256)
def _panel_count(key, spec: QuadratureSpec, system: PulseSystem) -> int:
    panels = spec.panels
    for _ in range(spec.max_levels):
        if _probe_error(system, panels, spec) < 1e-2 * spec.tol:
            return panels
        panels *= 2
    raise QuadratureError(f"time grid did not converge after {spec.max_levels} doublings")


def panel_count(system: PulseSystem, spec: QuadratureSpec) -> int:
    """Panels per unit support length that resolve the problem to ``spec.tol``."""
    return _panel_count(system_key(system), spec, system)


def make_grid(system: PulseSystem, times: Iterable[float], spec: QuadratureSpec,
              refine: int = 1) -> PanelGrid:
    """Grid covering the pulse support and every time in ``times``.

    ``times`` that are integration limits should be listed so they become
    panel edges; the grid starts at the earliest of them.
    """
    ti, tf = system.support
    pts = sorted({ti, tf, *(float(x) for x in times)})
    per_unit = panel_count(system, spec) * refine / (tf - ti)
    total = max(1, int(np.ceil(per_unit * (pts[-1] - pts[0]) - 1e-9)))
    return PanelGrid(pts, total, spec.nodes)


class Sampled:
    """A problem sampled on a grid whose first node time is ``problem.r``.

    Holds ``P`` and the lab-frame perturbation at the nodes, the rotated
    perturbation ``P^dagger V P`` and its running integral.
    """

    def __init__(self, problem: Problem, grid: PanelGrid):
        if abs(problem.r - grid.lo) > 0:
            raise ValueError("problem reference time must equal the grid start")
        self.problem = problem
        self.grid = grid
        self.P = problem.frame(grid.nodes)
        self.V = problem.perturbation(grid.nodes)
        self.Vt = dagger(self.P) @ self.V @ self.P
        self.F1 = grid.cumulative(self.Vt)

    def rotated(self, t) -> np.ndarray:
        """``P(t)^dagger V(t) P(t)`` at arbitrary times."""
        P = self.problem.frame(t)
        return dagger(P) @ self.problem.perturbation(t) @ P

    def to_lab(self, X: np.ndarray, t) -> np.ndarray:
        P = self.problem.frame(t)
        return P @ X @ dagger(P)


def sample_system(system: PulseSystem, times: Iterable[float],
                  spec: QuadratureSpec) -> Sampled:
    """Sample the sudden-regime problem on a grid covering ``times``."""
    grid = make_grid(system, times, spec)
    return Sampled(SystemProblem(system, grid.lo), grid)
