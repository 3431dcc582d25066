"""Scans and minimization of the g diagnostic over the free KAM times."""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from .kam import KamConfig, g_operator
from .quad import QuadratureSpec
from .system import PulseSystem

PARAMS = ("t1", "t1p", "t2", "t2p")


class OptimizationError(RuntimeError):
    """Every evaluation of the objective failed."""


def default_axes(config: KamConfig) -> tuple[str, ...]:
    """Free times that matter for the last iteration of ``config``.

    Type A has no dependence on ``t_k``, so only the lower limits are scanned.
    """
    k = config.iterations
    names = (f"t{k}", f"t{k}p")
    return names[1:] if config.kind == "A" else names


@dataclass(frozen=True)
class ScanGrid:
    """Rectangular grid over named free times; axes are listed slowest first."""

    names: tuple
    lows: tuple
    highs: tuple
    counts: tuple

    def __post_init__(self):
        n = len(self.names)
        if n == 0 or not (len(self.lows) == len(self.highs) == len(self.counts) == n):
            raise ValueError("scan grid needs matching names, bounds and counts")
        for name in self.names:
            if name not in PARAMS:
                raise ValueError(f"unknown free time {name!r}; expected one of {PARAMS}")
        if len(set(self.names)) != n:
            raise ValueError("duplicate scan axes")
        if any(int(c) < 2 for c in self.counts):
            raise ValueError("node counts must be >= 2")
        if any(not hi >= lo for lo, hi in zip(self.lows, self.highs)):
            raise ValueError("scan ranges must satisfy low <= high")

    @classmethod
    def over_support(cls, system: PulseSystem, names: Sequence[str], count: int = 101
                     ) -> "ScanGrid":
        ti, tf = system.support
        k = len(names)
        return cls(tuple(names), (ti,) * k, (tf,) * k, (int(count),) * k)

    def check_within(self, system: PulseSystem):
        ti, tf = system.support
        for lo, hi in zip(self.lows, self.highs):
            if lo < ti - 1e-12 or hi > tf + 1e-12:
                raise ValueError("scan ranges must lie within the pulse support")

    @property
    def axes(self) -> list[np.ndarray]:
        return [np.linspace(lo, hi, int(c)) for lo, hi, c in
                zip(self.lows, self.highs, self.counts)]

    @property
    def shape(self) -> tuple:
        return tuple(int(c) for c in self.counts)

    def points(self) -> list[dict]:
        """Parameter assignments in row-major order."""
        return [dict(zip(self.names, vals)) for vals in itertools.product(*self.axes)]


@dataclass
class ScanResult:
    grid: ScanGrid
    values: np.ndarray            # shaped like the grid, NaN where a node failed
    errors: dict                  # flat index -> message

    def rows(self):
        """``(params, g, error)`` in row-major order."""
        for idx, p in enumerate(self.grid.points()):
            yield p, float(self.values.flat[idx]), self.errors.get(idx, "")

    def argmin(self, prefer: Mapping[str, float] | None = None, rtol: float = 1e-9):
        """Index of the smallest sample; ties go to the node closest to ``prefer``."""
        vals = self.values
        if np.all(np.isnan(vals)):
            raise OptimizationError("all scan nodes failed")
        best = np.nanmin(vals)
        ties = np.argwhere(vals <= best + rtol * max(abs(best), 1e-300))
        if prefer is None or len(ties) == 1:
            return tuple(int(i) for i in ties[0])
        axes = self.grid.axes
        target = np.array([prefer.get(n, a[0]) for n, a in zip(self.grid.names, axes)])
        coords = np.array([[axes[d][i] for d, i in enumerate(t)] for t in ties])
        return tuple(int(i) for i in ties[int(np.argmin(np.sum((coords - target) ** 2, 1)))])

    def point(self, index) -> dict:
        axes = self.grid.axes
        return {n: float(axes[d][i]) for d, (n, i) in enumerate(zip(self.grid.names, index))}


def _g_value(system: PulseSystem, template: KamConfig, spec: QuadratureSpec, params: dict):
    try:
        cfg = replace(template, **params)
        return g_operator(system, template.iterations, cfg, spec).g, ""
    except Exception as exc:  # recorded per node, never fatal for a scan
        return float("nan"), f"{type(exc).__name__}: {exc}"


def _g_batch(args):
    system, template, spec, batch = args
    return [_g_value(system, template, spec, p) for p in batch]


def scan_g(system: PulseSystem, template: KamConfig, grid: ScanGrid | None = None,
           spec: QuadratureSpec = QuadratureSpec(), jobs: int = 1) -> ScanResult:
    """Evaluate ``g`` at every grid node (row-major); failures become NaN."""
    if grid is None:
        grid = ScanGrid.over_support(system, default_axes(template))
    grid.check_within(system)
    pts = grid.points()
    if jobs <= 1 or len(pts) < 2:
        results = [_g_value(system, template, spec, p) for p in pts]
    else:
        chunks = np.array_split(np.arange(len(pts)), min(len(pts), 4 * jobs))
        tasks = [(system, template, spec, [pts[i] for i in c]) for c in chunks if len(c)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = [r for part in pool.map(_g_batch, tasks) for r in part]
    vals = np.array([r[0] for r in results], dtype=float).reshape(grid.shape)
    errors = {i: r[1] for i, r in enumerate(results) if r[1]}
    return ScanResult(grid, vals, errors)


def classify_stationary(values: np.ndarray, index: Sequence[int]) -> str:
    """Classify a node of a 1-D or 2-D surface as ``min``, ``max`` or ``saddle``.

    Interior nodes use central second differences (the sign pattern of the
    discrete Hessian). Boundary nodes are compared with their in-grid
    neighbours; a mixed comparison there is reported as ``indefinite``.
    """
    f = np.asarray(values, dtype=float)
    idx = tuple(int(i) for i in index)
    if f.ndim not in (1, 2) or len(idx) != f.ndim:
        raise ValueError("classification needs a 1-D or 2-D surface and a matching index")
    interior = all(0 < i < n - 1 for i, n in zip(idx, f.shape))
    if interior:
        if f.ndim == 1:
            i = idx[0]
            fxx = f[i + 1] - 2 * f[i] + f[i - 1]
            return "min" if fxx > 0 else "max" if fxx < 0 else "indefinite"
        i, j = idx
        fxx = f[i + 1, j] - 2 * f[i, j] + f[i - 1, j]
        fyy = f[i, j + 1] - 2 * f[i, j] + f[i, j - 1]
        fxy = 0.25 * (f[i + 1, j + 1] - f[i + 1, j - 1] - f[i - 1, j + 1] + f[i - 1, j - 1])
        det = fxx * fyy - fxy ** 2
        if det < 0:
            return "saddle"
        if det > 0:
            return "min" if fxx > 0 else "max"
        return "indefinite"
    centre = f[idx]
    neigh = []
    for off in itertools.product((-1, 0, 1), repeat=f.ndim):
        if not any(off):
            continue
        q = tuple(i + o for i, o in zip(idx, off))
        if all(0 <= a < n for a, n in zip(q, f.shape)):
            neigh.append(f[q])
    neigh = np.array(neigh)
    if np.all(neigh < centre):
        return "max"
    if np.all(neigh > centre):
        return "min"
    return "indefinite"


@dataclass
class OptimizeResult:
    argmin: dict
    g: float
    surface: ScanResult | None
    classification: str
    evaluations: int
    converged: bool

    def to_dict(self) -> dict:
        return {"argmin": self.argmin, "g": self.g, "classification": self.classification,
                "evaluations": self.evaluations, "converged": self.converged,
                "axes": list(self.argmin)}


def minimize_g(system: PulseSystem, template: KamConfig, init: Mapping[str, float] | None = None,
               names: Sequence[str] | None = None, spec: QuadratureSpec = QuadratureSpec(),
               objective: Callable[[dict], float] | None = None, coarse: int = 21,
               xatol: float = 1e-4, fatol: float = 1e-12, jobs: int = 1,
               local: bool = False, restarts: int = 3) -> OptimizeResult:
    """Grid pass over the support, then bounded Nelder-Mead from the best node.

    ``objective`` replaces ``g`` (it receives the parameter dict). Ties among
    coarse nodes (the symmetric pulse makes mirror images of every point
    equivalent) are broken towards ``init``, which defaults to the template's
    times or ``t_i``. With ``local=True`` the grid pass is skipped and the
    simplex starts at ``init``, which finds the local minimum around it.
    Otherwise the simplex is also restarted from the next ``restarts - 1``
    lowest coarse-grid local minima and the best refinement wins.
    """
    names = tuple(default_axes(template) if names is None else names)
    ti, tf = system.support
    start = {n: (getattr(template, n) if getattr(template, n) is not None else ti)
             for n in names}
    if init is not None:
        start.update({k: float(v) for k, v in init.items() if k in names})
    for n, v in start.items():
        if not ti - 1e-12 <= v <= tf + 1e-12:
            raise ValueError(f"initial {n} = {v} lies outside the pulse support")
    if objective is None:
        def f(p):
            val, _ = _g_value(system, template, spec, p)
            return val
    else:
        def f(p):
            try:
                return float(objective(p))
            except Exception:
                return float("nan")

    surface = None
    if local:
        x0 = np.array([start[n] for n in names])
        g0 = f(start)
        if np.isnan(g0):
            raise OptimizationError("objective failed at the initial point")
    else:
        grid = ScanGrid.over_support(system, names, coarse)
        if objective is None:
            surface = scan_g(system, template, grid, spec, jobs)
        else:
            vals = np.array([f(p) for p in grid.points()], dtype=float).reshape(grid.shape)
            surface = ScanResult(grid, vals, {})
        best_idx = surface.argmin(prefer=start)
        x0 = np.array([surface.point(best_idx)[n] for n in names])
        g0 = float(surface.values[best_idx])
    evals = [0]

    def fun(x):
        evals[0] += 1
        v = f(dict(zip(names, map(float, x))))
        return np.inf if np.isnan(v) else v

    step = (tf - ti) / (coarse - 1)
    starts = [(x0, g0)]
    if surface is not None:
        starts += [(np.array([surface.point(q)[n] for n in names]), float(surface.values[q]))
                   for q in _coarse_minima(surface.values, best_idx)[:max(0, restarts - 1)]]
    x, g, converged = x0, g0, False
    for xs, gs in starts:
        simplex = np.vstack([xs] + [xs + step * e if xs[i] + step <= tf else xs - step * e
                                    for i, e in enumerate(np.eye(len(names)))])
        res = minimize(fun, xs, method="Nelder-Mead", bounds=[(ti, tf)] * len(names),
                       options={"xatol": xatol, "fatol": fatol, "initial_simplex": simplex,
                                "maxiter": 2000})
        xr, gr = (res.x, float(res.fun)) if res.fun <= gs else (xs, gs)
        if gr < g - fatol - 1e-6 * abs(g) or (xs is x0 and gr <= g):
            x, g, converged = xr, gr, bool(res.success)
    argmin = dict(zip(names, map(float, x)))
    if surface is None:
        label, n_grid = "local", 0
    else:
        label = classify_stationary(surface.values, best_idx) if len(names) <= 2 else "indefinite"
        n_grid = surface.values.size
    return OptimizeResult(argmin, g, surface, label, evals[0] + n_grid, converged)


def _coarse_minima(values: np.ndarray, exclude) -> list[tuple]:
    """Grid nodes no larger than any neighbour, lowest first (``exclude`` omitted)."""
    f = np.where(np.isnan(values), np.inf, values)
    out = []
    for idx in np.ndindex(f.shape):
        if idx == tuple(exclude) or not np.isfinite(f[idx]):
            continue
        ok = True
        for off in itertools.product((-1, 0, 1), repeat=f.ndim):
            q = tuple(a + o for a, o in zip(idx, off))
            if any(off) and all(0 <= a < n for a, n in zip(q, f.shape)) and f[q] < f[idx]:
                ok = False
                break
        if ok:
            out.append(idx)
    return sorted(out, key=lambda q: f[q])
