"""Dimensionless pulse-driven problems.

The full Hamiltonian is ``Omega(t) X + eps Y``. In the sudden regime the
pulse term is the solvable part ``H0(t) = Omega(t) X`` and the static term
``Y`` is the perturbation, so ``U0(t, s) = exp(-i (A(t) - A(s)) X)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import erf

from .linalg import (SIGMA1, SIGMA3, HermiticityError, dagger, hermitize, is_hermitian,
                     unitary_exp)

FORMS = ("sin2", "gaussian", "tabulated")
_FORM_ALIASES = {"sin-squared": "sin2", "sin_squared": "sin2", "sin2": "sin2",
                 "gaussian": "gaussian", "gaussian-truncated": "gaussian",
                 "tabulated": "tabulated"}


@dataclass(frozen=True)
class PulseShape:
    """Envelope ``Omega(t)`` with total area ``area`` on ``support``.

    ``params`` holds form-specific settings: ``width`` (relative to the
    support length, gaussian only) or ``times``/``values`` for tabulated
    shapes, which are rescaled so the area is exactly ``area``.
    """

    form: str = "sin2"
    area: float = 1.0
    support: tuple[float, float] = (0.0, 1.0)
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        form = _FORM_ALIASES.get(self.form)
        if form is None:
            raise ValueError(f"unknown pulse form {self.form!r}; expected one of {FORMS}")
        object.__setattr__(self, "form", form)
        ti, tf = (float(x) for x in self.support)
        if not tf > ti:
            raise ValueError("pulse support must satisfy t_i < t_f")
        object.__setattr__(self, "support", (ti, tf))
        object.__setattr__(self, "area", float(self.area))
        if form == "tabulated":
            times = np.asarray(self.params["times"], dtype=float)
            values = np.asarray(self.params["values"], dtype=float)
            spline = CubicSpline(times, values)
            raw = float(spline.integrate(ti, tf))
            if raw == 0.0:
                raise ValueError("tabulated pulse has zero area")
            scale = self.area / raw
            spline = CubicSpline(times, values * scale)
            object.__setattr__(self, "_spline", spline)
            object.__setattr__(self, "_spline_int", spline.antiderivative())
        self._check_area()

    @property
    def t_i(self) -> float:
        return self.support[0]

    @property
    def t_f(self) -> float:
        return self.support[1]

    def _check_area(self):
        x, w = np.polynomial.legendre.leggauss(48)
        ti, tf = self.support
        edges = np.linspace(ti, tf, 9)
        if self.form == "tabulated":
            knots = self._spline.x
            edges = np.union1d(edges, knots[(knots > ti) & (knots < tf)])
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            total += 0.5 * (b - a) * np.dot(w, self.omega(0.5 * (a + b) + 0.5 * (b - a) * x))
        if abs(total - self.area) > 1e-12 * max(1.0, abs(self.area)):
            raise ValueError(f"pulse area check failed: {total!r} != {self.area!r}")

    def _width(self) -> float:
        return float(self.params.get("width", 0.2))

    def omega(self, t):
        t = np.asarray(t, dtype=float)
        ti, tf = self.support
        T = tf - ti
        s = (t - ti) / T
        inside = (s >= 0.0) & (s <= 1.0)
        if self.form == "sin2":
            val = 2.0 * self.area / T * np.sin(np.pi * s) ** 2
        elif self.form == "gaussian":
            w = self._width()
            norm = w * np.sqrt(np.pi) * erf(0.5 / w)
            val = self.area / (T * norm) * np.exp(-((s - 0.5) / w) ** 2)
        else:
            val = self._spline(np.clip(t, ti, tf))
        return np.where(inside, val, 0.0)

    def cumulative_area(self, t):
        """``A(t)``, the integral of ``Omega`` from ``t_i`` to ``t`` (clamped)."""
        t = np.asarray(t, dtype=float)
        ti, tf = self.support
        s = np.clip((t - ti) / (tf - ti), 0.0, 1.0)
        if self.form == "sin2":
            return self.area * (s - np.sin(2 * np.pi * s) / (2 * np.pi))
        if self.form == "gaussian":
            w = self._width()
            return self.area * (erf((s - 0.5) / w) + erf(0.5 / w)) / (2 * erf(0.5 / w))
        tc = ti + s * (tf - ti)
        return self._spline_int(tc) - self._spline_int(ti)

    def to_config(self) -> dict:
        cfg = {"form": self.form, "area": self.area, "support": list(self.support)}
        if self.params:
            cfg["params"] = {k: (list(v) if isinstance(v, (list, tuple, np.ndarray)) else v)
                             for k, v in self.params.items()}
        return cfg


@dataclass(frozen=True)
class PulseSystem:
    """``i dU/dt = [Omega(t) X + eps Y] U`` on the pulse support."""

    pulse: PulseShape = field(default_factory=PulseShape)
    epsilon: float = 0.5
    coupling: np.ndarray = field(default_factory=lambda: SIGMA1.copy(), compare=False)
    static: np.ndarray = field(default_factory=lambda: SIGMA3.copy(), compare=False)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        X = np.asarray(self.coupling, dtype=complex)
        Y = np.asarray(self.static, dtype=complex)
        if X.shape != Y.shape or X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ValueError("coupling and static operators must be square and of equal shape")
        if not (is_hermitian(X) and is_hermitian(Y)):
            raise HermiticityError("coupling and static operators must be Hermitian")
        X, Y = hermitize(X), hermitize(Y)
        X.flags.writeable = False
        Y.flags.writeable = False
        object.__setattr__(self, "coupling", X)
        object.__setattr__(self, "static", Y)
        object.__setattr__(self, "epsilon", float(self.epsilon))
        w, Q = np.linalg.eigh(X)
        object.__setattr__(self, "_x_eig", (w, Q))

    @property
    def dim(self) -> int:
        return self.coupling.shape[0]

    @property
    def area(self) -> float:
        return self.pulse.area

    @property
    def support(self) -> tuple[float, float]:
        return self.pulse.support

    def with_epsilon(self, epsilon: float) -> "PulseSystem":
        return replace(self, epsilon=epsilon)

    def with_area(self, area: float) -> "PulseSystem":
        return replace(self, pulse=replace(self.pulse, area=area))

    def omega(self, t):
        return self.pulse.omega(t)

    def h0(self, t) -> np.ndarray:
        return np.multiply.outer(self.omega(t), self.coupling)

    def v1(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(self.static, t.shape + self.static.shape).copy()

    def hamiltonian(self, t) -> np.ndarray:
        return self.h0(t) + self.epsilon * self.v1(t)

    def rotation(self, theta) -> np.ndarray:
        """``exp(-i theta X)`` for scalar or array ``theta``."""
        theta = np.asarray(theta, dtype=float)
        if self.dim == 2:
            return unitary_exp(np.multiply.outer(theta, self.coupling), check=False)
        w, Q = self._x_eig
        phases = np.exp(-1j * np.multiply.outer(theta, w))
        return (Q * phases[..., None, :]) @ dagger(Q)

    def to_config(self) -> dict:
        cfg = self.pulse.to_config()
        cfg["epsilon"] = self.epsilon
        cfg["dim"] = self.dim
        return cfg

    @classmethod
    def from_config(cls, cfg: dict) -> "PulseSystem":
        dim = int(cfg.get("dim", 2))
        if dim != 2 and ("coupling" not in cfg or "static" not in cfg):
            raise ValueError("dim != 2 requires explicit 'coupling' and 'static' operators")
        pulse = PulseShape(form=cfg.get("form", "sin2"), area=cfg.get("area", 1.0),
                           support=tuple(cfg.get("support", (0.0, 1.0))),
                           params=dict(cfg.get("params", {})))
        kwargs = {}
        for key in ("coupling", "static"):
            if key in cfg:
                kwargs[key] = _complex_matrix(cfg[key])
        return cls(pulse=pulse, epsilon=float(cfg.get("epsilon", 0.5)), **kwargs)


def _complex_matrix(rows) -> np.ndarray:
    """Parse ``[[re, ...]]`` or ``[[[re, im], ...]]`` into a complex matrix."""
    arr = np.asarray(rows, dtype=float)
    if arr.ndim == 3:
        return arr[..., 0] + 1j * arr[..., 1]
    return arr.astype(complex)


def reduce_units(omega: float, tau: float, static: np.ndarray, pulse: PulseShape,
                 coupling: np.ndarray = SIGMA1) -> PulseSystem:
    """Build the dimensionless problem from physical parameters.

    ``static`` is the free Hamiltonian in units of ``hbar*omega`` and
    ``pulse`` is given in physical time (seconds); its support is rescaled
    by ``tau`` while its area, being dimensionless, is kept.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if omega < 0:
        raise ValueError("omega must be nonnegative")
    scaled = replace(pulse, support=(pulse.t_i / tau, pulse.t_f / tau),
                     params=_rescale_params(pulse, tau))
    return PulseSystem(pulse=scaled, epsilon=omega * tau, coupling=coupling, static=static)


def _rescale_params(pulse: PulseShape, tau: float) -> dict:
    params = dict(pulse.params)
    if pulse.form == "tabulated":
        params["times"] = np.asarray(params["times"], dtype=float) / tau
    return params


def area(system: PulseSystem, t) -> float | np.ndarray:
    """Cumulative pulse area from ``t_i`` to ``t``."""
    out = system.pulse.cumulative_area(t)
    return float(out) if np.ndim(out) == 0 else out


def u_h0(system: PulseSystem, t, t0) -> np.ndarray:
    """Unperturbed propagator ``U0(t, t0) = exp(-i (A(t) - A(t0)) X)``."""
    theta = system.pulse.cumulative_area(t) - system.pulse.cumulative_area(t0)
    return system.rotation(theta)


def conjugate_frame(system: PulseSystem, X: np.ndarray, t, s) -> np.ndarray:
    """``U0(s, t) X U0(t, s)``."""
    X = np.asarray(X, dtype=complex)
    if X.shape[-1] != system.dim:
        raise ValueError("operator dimension does not match the system")
    U = u_h0(system, s, t)
    return U @ X @ dagger(U)


def support_times(system: PulseSystem, extra: Sequence[float] = ()) -> list[float]:
    """Breakpoints: the pulse support plus any additional times."""
    return sorted({*system.support, *(float(x) for x in extra)})
