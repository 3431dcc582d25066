"""Operator-valued quadrature on composite Gauss-Legendre panels.

Besides plain definite integrals, :class:`PanelGrid` provides cumulative
(running) integrals at every node through a per-panel spectral integration
matrix, which is what the nested time-ordered integrals need.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial import legendre

from .linalg import commutator, hermitize, is_hermitian, spectral_norm


class QuadratureError(RuntimeError):
    """Panel doubling did not reach the requested tolerance."""

    def __init__(self, message: str, previous=None, last=None):
        super().__init__(message)
        self.previous = previous
        self.last = last


@dataclass(frozen=True)
class QuadratureSpec:
    nodes: int = 8
    panels: int = 16
    tol: float = 1e-10
    max_levels: int = 12

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("quadrature tolerance must be positive")
        if self.panels < 1 or self.nodes < 2 or self.max_levels < 1:
            raise ValueError("panels >= 1, nodes >= 2 and max_levels >= 1 required")


class OperatorCurve:
    """Time-dependent operator with a declared support; zero outside it.

    ``func`` must accept a 1-D array of times and return ``(n, d, d)``.
    """

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                 dim: int | None = None):
        self.func = func
        self.lo = float(lo)
        self.hi = float(hi)
        self._dim = dim

    @property
    def dim(self) -> int:
        if self._dim is None:
            self._dim = self.func(np.array([self.lo])).shape[-1]
        return self._dim

    def __call__(self, t):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        inside = (t >= self.lo) & (t <= self.hi)
        out = np.zeros((t.size, self.dim, self.dim), dtype=complex)
        if inside.any():
            out[inside] = self.func(t[inside])
        return out[0] if scalar else out


@lru_cache(maxsize=None)
def _reference_rule(n: int):
    x, w = legendre.leggauss(n)
    # columns of inv(V) are Legendre coefficients of the Lagrange basis
    V = legendre.legvander(x, n - 1)
    coef = np.linalg.inv(V)
    icoef = np.stack([legendre.legint(coef[:, k], lbnd=-1) for k in range(n)], axis=1)
    S = legendre.legvander(x, n) @ icoef
    return x, w, icoef, S


class PanelGrid:
    """Composite Gauss-Legendre nodes over ``[lo, hi]``.

    ``breakpoints`` are always panel edges; each segment between consecutive
    breakpoints gets a number of equal panels proportional to its length.
    """

    def __init__(self, breakpoints: Sequence[float], panels: int = 16, order: int = 8):
        bp = np.unique(np.asarray(breakpoints, dtype=float))
        if bp.size < 2:
            raise ValueError("need at least two distinct breakpoints")
        length = bp[-1] - bp[0]
        edges = [bp[:1]]
        for a, b in zip(bp[:-1], bp[1:]):
            m = max(1, int(np.ceil(panels * (b - a) / length - 1e-9)))
            edges.append(np.linspace(a, b, m + 1)[1:])
        self.edges = np.concatenate(edges)
        self.order = order
        self.panels = self.edges.size - 1
        x, w, self._icoef, self._S = _reference_rule(order)
        self._half = 0.5 * np.diff(self.edges)
        mid = 0.5 * (self.edges[1:] + self.edges[:-1])
        self.nodes = (mid[:, None] + self._half[:, None] * x[None, :]).ravel()
        self.weights = (self._half[:, None] * w[None, :]).ravel()

    @property
    def lo(self) -> float:
        return float(self.edges[0])

    @property
    def hi(self) -> float:
        return float(self.edges[-1])

    def integrate(self, values: np.ndarray) -> np.ndarray:
        """Integral over the whole grid of node samples ``(N, ...)``."""
        return np.tensordot(self.weights, values, axes=(0, 0))

    def cumulative(self, values: np.ndarray) -> "Cumulative":
        """Running integral from ``lo`` of node samples ``(N, ...)``."""
        return Cumulative(self, values)

    def panel_of(self, t: np.ndarray) -> np.ndarray:
        j = np.searchsorted(self.edges, t, side="right") - 1
        return np.clip(j, 0, self.panels - 1)


class Cumulative:
    """Running integral ``F(t) = int_lo^t f`` built from node samples of ``f``."""

    def __init__(self, grid: PanelGrid, values: np.ndarray):
        self.grid = grid
        n = grid.order
        tail = values.shape[1:]
        f = values.reshape((grid.panels, n) + tail)
        self._f = f
        within = np.einsum("ik,pk...->pi...", grid._S, f) * grid._half.reshape(
            (-1, 1) + (1,) * len(tail))
        panel_tot = np.einsum("pk,pk...->p...", grid.weights.reshape(grid.panels, n), f)
        start = np.concatenate([np.zeros((1,) + tail, dtype=values.dtype),
                                np.cumsum(panel_tot, axis=0)])
        self.edge_values = start
        self.node_values = (start[:-1, None] + within).reshape(values.shape)

    @property
    def total(self) -> np.ndarray:
        return self.edge_values[-1]

    def __call__(self, t):
        """Evaluate ``F`` at arbitrary times inside the grid."""
        g = self.grid
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if np.any(t < g.lo - 1e-12) or np.any(t > g.hi + 1e-12):
            raise ValueError("evaluation time outside quadrature grid")
        j = g.panel_of(t)
        mid = 0.5 * (g.edges[j] + g.edges[j + 1])
        xi = np.clip((t - mid) / g._half[j], -1.0, 1.0)
        S = legendre.legvander(xi, g.order) @ g._icoef  # (m, n)
        part = np.einsum("mk,mk...->m...", S, self._f[j]) * g._half[j].reshape(
            (-1,) + (1,) * (self._f.ndim - 2))
        out = self.edge_values[j] + part
        return out[0] if scalar else out


def _support_breaks(f, lo: float, hi: float) -> list[float]:
    pts = [lo, hi]
    for b in (getattr(f, "lo", None), getattr(f, "hi", None)):
        if b is not None and lo < b < hi:
            pts.append(b)
    return pts


def _converge(estimate: Callable[[int], np.ndarray], spec: QuadratureSpec) -> np.ndarray:
    panels = spec.panels
    prev = estimate(panels)
    for _ in range(spec.max_levels):
        panels *= 2
        cur = estimate(panels)
        if spectral_norm(cur - prev) < spec.tol:
            return cur
        prev_prev, prev = prev, cur
    raise QuadratureError(
        f"no convergence to {spec.tol:g} after {spec.max_levels} doublings",
        previous=prev_prev, last=prev)


def integrate_op(f: Callable, t_lo: float, t_hi: float,
                 spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """Integrate an operator-valued function of time over ``[t_lo, t_hi]``.

    Panel counts are doubled until two successive estimates agree to
    ``spec.tol`` in spectral norm. Hermitian integrands give an exactly
    Hermitian result.
    """
    if t_hi < t_lo:
        raise ValueError("t_lo must not exceed t_hi")
    if t_hi == t_lo:
        sample = np.asarray(f(np.array([t_lo])))
        return np.zeros(sample.shape[1:], dtype=complex)
    breaks = _support_breaks(f, t_lo, t_hi)
    herm = []

    def estimate(panels):
        grid = PanelGrid(breaks, panels, spec.nodes)
        vals = np.asarray(f(grid.nodes))
        if not herm:
            herm.append(is_hermitian(vals, 1e-12))
        return grid.integrate(vals)

    out = _converge(estimate, spec)
    return hermitize(out) if herm[0] else out


def _nested_on_grid(level: int, grid: PanelGrid, H: np.ndarray) -> np.ndarray:
    m1 = grid.cumulative(H).node_values
    if level == 2:
        return 0.5j * grid.integrate(commutator(m1, H))
    inner = grid.cumulative(commutator(m1, H)).node_values
    term_a = -0.25 * grid.integrate(commutator(inner, H))
    term_b = -(1.0 / 12.0) * grid.integrate(commutator(m1, commutator(m1, H)))
    return term_a + term_b


def nested_integral(level: int, generator: Callable, t0: float, t: float,
                    spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """Second or third Magnus term of ``generator`` over ``[t0, t]``.

    Level 2 is ``(i/2) int [int H, H]``; level 3 is
    ``-(1/4) int [int [int H, H], H] - (1/12) int [int H, [int H, H]]``,
    all integrals time-ordered from ``t0``.
    """
    if level not in (2, 3):
        raise ValueError("level must be 2 or 3")
    if t < t0:
        raise ValueError("nested_integral requires t0 <= t")
    if t == t0:
        d = np.asarray(generator(np.array([t0]))).shape[-1]
        return np.zeros((d, d), dtype=complex)
    breaks = _support_breaks(generator, t0, t)

    def estimate(panels):
        grid = PanelGrid(breaks, panels, spec.nodes)
        return _nested_on_grid(level, grid, np.asarray(generator(grid.nodes)))

    return hermitize(_converge(estimate, spec))
