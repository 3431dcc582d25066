"""Superexponential KAM iterations for pulse-driven problems.

Iteration ``k`` works with ``eps_k = eps**(2**(k-1))`` and the effective
propagator ``Q_{k-1}(t) = U_{H^e_{k-1}}(t, r)`` of the previous step
(``Q_0 = U0(t, r)``). With ``X~ = Q_{k-1}^dagger X Q_{k-1}`` the cohomology
equation is solved by

    W~_k(t) = int_{t_k'}^t V~_k - (t - t_k') D~_k,

where ``D~_k`` is constant: zero (type A) or ``V~_k(t_k)`` (type B). The
effective propagator then gains a factor ``exp(-i (t - r) eps_k D~_k)`` and the
next perturbation follows from the commutator series in ``W_k``, resummed in
closed form for two-level systems.

Type C first re-identifies the solvable part as ``H0 + eps D_1`` (see
:func:`type_c_system`), which makes ``D_1' = 0``; later iterations use the
type B choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial.polynomial import polyval

from .frames import (InteractionProblem, Problem, Sampled, ShiftedProblem, SystemProblem,
                     make_grid, system_key)
from .linalg import (ad_pow, commutator, dagger, hermitize, pauli_length,
                     spectral_norm, unitary_exp)
from .quad import QuadratureSpec
from .system import PulseSystem, u_h0

KINDS = ("A", "B", "C")


class ModeError(ValueError):
    """Resummed mode requested for an operator it cannot handle."""


@dataclass(frozen=True)
class KamConfig:
    """Type, iteration count and free times of a KAM expansion.

    ``t1``/``t2`` anchor ``D_k`` (ignored by type A), ``t1p``/``t2p`` are the
    lower limits of ``W_k`` and ``t1pp``/``t2pp`` only enter the diagnostic
    recomposition. Unset times default to ``t0``. ``truncation`` is
    ``"resummed"`` or the number of commutators kept in the series for the
    next perturbation.
    """

    kind: str = "B"
    iterations: int = 1
    t1: float | None = None
    t1p: float | None = None
    t2: float | None = None
    t2p: float | None = None
    t1pp: float | None = None
    t2pp: float | None = None
    truncation: str | int = "resummed"
    coefficients: str = "derived"
    x0: float = 0.1

    def __post_init__(self):
        kind = str(self.kind).upper()
        if kind not in KINDS:
            raise ValueError(f"KAM kind must be one of {KINDS}, got {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if self.iterations not in (1, 2):
            raise ValueError("iterations must be 1 or 2")
        trunc = self.truncation
        if isinstance(trunc, str) and trunc.isdigit():
            trunc = int(trunc)
        if isinstance(trunc, str):
            if trunc != "resummed":
                raise ValueError("truncation must be 'resummed' or a commutator count")
        elif int(trunc) < 1:
            raise ValueError("commutator count must be >= 1")
        else:
            trunc = int(trunc)
        object.__setattr__(self, "truncation", trunc)
        if self.coefficients not in ("derived", "alternate"):
            raise ValueError("coefficients must be 'derived' or 'alternate'")
        if not self.x0 > 0:
            raise ValueError("x0 must be positive")

    def anchor(self, k: int, t0: float) -> float:
        val = (self.t1, self.t2, None)[min(k, 3) - 1]
        return float(t0) if val is None else float(val)

    def lower(self, k: int, t0: float) -> float:
        val = (self.t1p, self.t2p, None)[min(k, 3) - 1]
        return float(t0) if val is None else float(val)

    def free_times(self) -> dict:
        return {"t1": self.t1, "t1p": self.t1p, "t2": self.t2, "t2p": self.t2p}

    def with_times(self, **times) -> "KamConfig":
        return replace(self, **times)


# -- coefficients of the resummed next perturbation ----------------------------

# Taylor coefficients in powers of y^2 (through y^10) for small arguments.
_TAYLOR = {
    "a": (1 / 2, -1 / 8, 1 / 144, -1 / 5760, 1 / 403200, -1 / 43545600),
    "b": (1 / 2, -1 / 24, 1 / 720, -1 / 40320, 1 / 3628800, -1 / 479001600),
    "c": (-1 / 3, 1 / 30, -1 / 840, 1 / 45360, -1 / 3991680, 1 / 518918400),
    "d": (-1 / 6, 1 / 120, -1 / 5040, 1 / 362880, -1 / 39916800, 1 / 6227020800),
}


def _coeffs_derived(y, x0):
    y = np.asarray(y, dtype=float)
    small = np.abs(y) < x0
    ys = np.where(small, 1.0, y)
    c, s = np.cos(ys), np.sin(ys)
    a = 1j * (c + ys * s - 1) / ys**2
    b = 1j * (1 - c) / ys**2
    cc = (ys * c - s) / ys**3
    d = (s - ys) / ys**3
    u = y**2
    a = np.where(small, 1j * polyval(u, _TAYLOR["a"]), a)
    b = np.where(small, 1j * polyval(u, _TAYLOR["b"]), b)
    cc = np.where(small, polyval(u, _TAYLOR["c"]), cc)
    d = np.where(small, polyval(u, _TAYLOR["d"]), d)
    return a, b, cc, d


def resummation_coefficients(eps_k: float, lam, variant: str = "derived", x0: float = 0.1):
    """Coefficients ``(a, b, c, d)`` of the closed-form next perturbation.

    ``variant="derived"`` sums the commutator series exactly: on traceless
    two-level operators ``ad_W^2`` acts as multiplication by ``(2 lam)^2``,
    so the argument is ``y = 2 eps_k lam`` and ``d = (sin y - y) / y^3``.
    ``variant="alternate"`` evaluates the alternative closed forms in
    ``x = eps_k lam`` with ``d = c + i b``. Below ``x0`` a Taylor expansion
    through tenth order replaces the closed forms.
    """
    lam = np.asarray(lam, dtype=float)
    if variant == "derived":
        return _coeffs_derived(2.0 * eps_k * lam, x0)
    if variant != "alternate":
        raise ValueError("variant must be 'derived' or 'alternate'")
    a, b, c, _ = _coeffs_derived(eps_k * lam, x0)
    return a, b, c, c + 1j * b


def _series_perturbation(W, V, D, eps_k, K):
    out = np.zeros(np.broadcast_shapes(W.shape, V.shape), dtype=complex)
    for j in range(1, K + 1):
        out = out + (1j**j * eps_k ** (j - 1) / factorial(j + 1)) * ad_pow(W, j * V + D, j)
    return out


def _resummed_perturbation(W, V, D, eps_k, variant, x0):
    if W.shape[-1] != 2:
        raise ModeError("resummed mode needs two-level operators")
    tr = W[..., 0, 0] + W[..., 1, 1]
    if np.max(np.abs(tr), initial=0.0) > 1e-9 * max(1.0, float(np.max(np.abs(W), initial=0.0))):
        raise ModeError("resummed mode needs a traceless W")
    lam = pauli_length(W)
    a, b, c, d = resummation_coefficients(eps_k, lam, variant, x0)
    ex = (Ellipsis, None, None)
    inner = commutator(W, c[ex] * V + d[ex] * D)
    return commutator(W, a[ex] * V + b[ex] * D) + eps_k * commutator(W, inner)


def perturbation_series(W, V, D, eps_k: float, truncation="resummed",
                        coefficients: str = "derived", x0: float = 0.1) -> np.ndarray:
    """Next perturbation from ``W_k, V_k, D_k`` at one or many times.

    Resummed: ``[W, aV + bD] + eps_k [W, [W, cV + dD]]``. Truncated to ``K``
    commutators: ``sum_{j<=K} i^j eps_k^(j-1) / (j+1)! ad_W^j (j V + D)``.
    """
    W = np.asarray(W, dtype=complex)
    V = np.asarray(V, dtype=complex)
    D = np.asarray(D, dtype=complex)
    if truncation == "resummed":
        out = _resummed_perturbation(W, V, D, eps_k, coefficients, x0)
    else:
        out = _series_perturbation(W, V, D, eps_k, int(truncation))
    return hermitize(out)


# -- the iteration engine --------------------------------------------------------

@dataclass
class KamIterate:
    """One KAM step: constant ``D~_k`` and the running integral of ``V~_k``."""

    k: int
    eps_k: float
    D_frame: np.ndarray
    t_lower: float
    F: object  # quad.Cumulative of Q_{k-1}^dagger V_k Q_{k-1}
    Q_nodes: np.ndarray = field(repr=False)  # Q_{k-1} at the grid nodes
    V_nodes: np.ndarray = field(repr=False)  # lab V_k at the grid nodes


class KamEngine:
    """Runs KAM iterations on a sampled :class:`~pulsekam.frames.Problem`."""

    def __init__(self, sampled: Sampled, epsilon: float, config: KamConfig, t0: float):
        self.S = sampled
        self.problem = sampled.problem
        self.r = sampled.problem.r
        self.eps = float(epsilon)
        self.config = config
        self.t0 = float(t0)
        self.iterates: list[KamIterate] = []
        for _ in range(config.iterations):
            self._advance()

    # evaluation of step quantities at arbitrary times

    def Q(self, j: int, t) -> np.ndarray:
        """``Q_j(t) = U_{H^e_j}(t, r)``."""
        t = np.asarray(t, dtype=float)
        out = self.problem.frame(t)
        for it in self.iterates[:j]:
            if it.D_frame is not None:
                gen = np.multiply.outer((t - self.r) * it.eps_k, it.D_frame)
                out = out @ unitary_exp(gen, check=False)
        return out

    def W_frame(self, k: int, t) -> np.ndarray:
        it = self.iterates[k - 1]
        t = np.asarray(t, dtype=float)
        out = it.F(t) - it.F(it.t_lower)
        if it.D_frame is not None:
            out = out - np.multiply.outer(t - it.t_lower, it.D_frame)
        return out

    def W(self, k: int, t) -> np.ndarray:
        Q = self.Q(k - 1, t)
        return hermitize(Q @ self.W_frame(k, t) @ dagger(Q))

    def D(self, k: int, t) -> np.ndarray:
        it = self.iterates[k - 1]
        Q = self.Q(k - 1, t)
        if it.D_frame is None:
            return np.zeros(Q.shape, dtype=complex)
        return Q @ it.D_frame @ dagger(Q)

    def V(self, k: int, t) -> np.ndarray:
        """Lab-frame perturbation ``V_k(t)`` (``V_1`` is the problem's own)."""
        if k == 1:
            return self.problem.perturbation(t)
        it = self.iterates[k - 2]
        return self._next(self.W(k - 1, t), self.V(k - 1, t), self.D(k - 1, t), it.eps_k)

    def _next(self, W, V, D, eps_k):
        c = self.config
        return perturbation_series(W, V, D, eps_k, c.truncation, c.coefficients, c.x0)

    def _d_choice(self, k: int) -> bool:
        kind = self.config.kind
        return kind == "B" or (kind == "C" and k >= 2)

    def _advance(self, with_d: bool = True):
        k = len(self.iterates) + 1
        nodes = self.S.grid.nodes
        eps_k = self.eps ** (2 ** (k - 1))
        if k == 1:
            Qn = self.S.P
            Vn = self.S.V
            Vt = self.S.Vt
            F = self.S.F1
        else:
            prev = self.iterates[-1]
            Qn = prev.Q_nodes
            if prev.D_frame is not None:
                Qn = Qn @ unitary_exp(np.multiply.outer((nodes - self.r) * prev.eps_k,
                                                        prev.D_frame), check=False)
            Wf = prev.F.node_values - prev.F(prev.t_lower)
            if prev.D_frame is not None:
                Wf = Wf - np.multiply.outer(nodes - prev.t_lower, prev.D_frame)
            Wn = hermitize(prev.Q_nodes @ Wf @ dagger(prev.Q_nodes))
            Dn = (np.zeros_like(Wn) if prev.D_frame is None
                  else prev.Q_nodes @ prev.D_frame @ dagger(prev.Q_nodes))
            Vn = self._next(Wn, prev.V_nodes, Dn, prev.eps_k)
            Vt = dagger(Qn) @ Vn @ Qn
            F = self.S.grid.cumulative(Vt)
        D_frame = None
        if with_d and self._d_choice(k):
            tk = self.config.anchor(k, self.t0)
            # Q_{k-1} is complete once the previous iterates exist
            Qk = self.Q(k - 1, tk)
            D_frame = hermitize(dagger(Qk) @ self.V(k, tk) @ Qk)
        self.iterates.append(KamIterate(k, eps_k, D_frame, self.config.lower(k, self.t0),
                                        F, Qn, Vn))

    # composite objects

    @property
    def n(self) -> int:
        return len(self.iterates)

    def effective(self, t, t0, n: int | None = None) -> np.ndarray:
        """``U_{H^e_n}(t, t0) = Q_n(t) Q_n(t0)^dagger``."""
        n = self.n if n is None else n
        return self.Q(n, t) @ dagger(self.Q(n, t0))

    def transformation(self, t, n: int | None = None) -> np.ndarray:
        """``T_1(t) ... T_n(t)`` with ``T_k = exp(-i eps_k W_k(t))``."""
        n = self.n if n is None else n
        out = np.eye(self.problem.dim, dtype=complex)
        for k in range(1, n + 1):
            out = out @ unitary_exp(self.iterates[k - 1].eps_k * self.W(k, t), check=False)
        return out

    def propagator(self, t, t0, t_dprime: float | None = None) -> np.ndarray:
        Tt = self.transformation(t)
        T0 = self.transformation(t0)
        if t_dprime is None:
            Ue = self.effective(t, t0)
        else:
            Ue = self.effective(t, t_dprime) @ self.effective(t_dprime, t0)
        return Tt @ Ue @ dagger(T0)

    def remainder_generator(self, t, t0) -> np.ndarray:
        """``G = int_{t0}^t U_{H^e_n}(t0,u) V_{n+1}(u) U_{H^e_n}(u,t0) du``."""
        Q0 = self.Q(self.n, t0)
        self._advance(with_d=False)
        try:
            F = self.iterates[-1].F
            G = Q0 @ (F(t) - F(t0)) @ dagger(Q0)
        finally:
            self.iterates.pop()
        return hermitize(G)


# -- cached sampling --------------------------------------------------------------

@lru_cache(maxsize=64)
def _sampled_system(key, spec: QuadratureSpec, times: tuple, system: PulseSystem) -> Sampled:
    grid = make_grid(system, times, spec)
    return Sampled(SystemProblem(system, grid.lo), grid)


def _sampled(system: PulseSystem, config: KamConfig, t: float, t0: float,
             spec: QuadratureSpec, s: float | None = None) -> Sampled:
    times = tuple(sorted({float(t), float(t0)}))
    if s is None and config.kind != "C":
        return _sampled_system(system_key(system), spec, times, system)
    grid = make_grid(system, times, spec)
    if s is None:
        base: Problem = SystemProblem(system, grid.lo)
    else:
        base = InteractionProblem(system, s, grid.lo)
    if config.kind == "C":
        base = ShiftedProblem(base, config.anchor(1, t0), system.epsilon)
    return Sampled(base, grid)


def _default_t0(system: PulseSystem, t0):
    return system.support[0] if t0 is None else float(t0)


def _check_times(system: PulseSystem, config: KamConfig, t0: float, t: float):
    lo, hi = min(system.support[0], t0, t), max(system.support[1], t0, t)
    for name, val in config.free_times().items():
        if val is not None and not lo - 1e-12 <= val <= hi + 1e-12:
            raise ValueError(f"{name} = {val} lies outside [{lo}, {hi}]")


def kam_engine(system: PulseSystem, config: KamConfig, t: float, t0: float,
               spec: QuadratureSpec = QuadratureSpec(), s: float | None = None) -> KamEngine:
    """Build the iteration engine for a propagation from ``t0`` to ``t``."""
    _check_times(system, config, t0, t)
    S = _sampled(system, config, t, t0, spec, s)
    return KamEngine(S, system.epsilon, config, t0)


# -- public operations ----------------------------------------------------------

def type_c_system(system: PulseSystem, t1: float, r: float | None = None) -> ShiftedProblem:
    """Re-identified pair ``H0' = H0 + eps D_1(t; t1)``, ``V_1' = V_1 - D_1``."""
    r = system.support[0] if r is None else float(r)
    return ShiftedProblem(SystemProblem(system, r), t1, system.epsilon)


def d_operator(system: PulseSystem, k: int, t: float, config: KamConfig,
               t0: float | None = None, spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """``D_k(t)``; for type C the shift ``D_1`` lives in the solvable part, so ``D_1' = 0``."""
    if not 1 <= k <= config.iterations:
        raise ValueError("k must lie in 1..iterations")
    t0 = _default_t0(system, t0)
    eng = kam_engine(system, config, system.support[1], t0, spec)
    return hermitize(eng.D(k, t))


def w_operator(system: PulseSystem, k: int, t: float, config: KamConfig,
               spec: QuadratureSpec = QuadratureSpec(), t0: float | None = None) -> np.ndarray:
    """Generator ``W_k(t)`` of the ``k``-th KAM transformation."""
    if not 1 <= k <= config.iterations:
        raise ValueError("k must lie in 1..iterations")
    t0 = _default_t0(system, t0)
    eng = kam_engine(system, config, system.support[1], t0, spec)
    return eng.W(k, t)


def effective_propagator(system: PulseSystem, n: int, t: float, t0: float, config: KamConfig,
                         spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """``U_{H^e_n}(t, t0)``; ``n = 0`` gives ``U0(t, t0)``.

    For type C the re-identified solvable part already carries the
    ``eps D_1`` factor, even at ``n = 0``.
    """
    if n == 0 and config.kind != "C":
        return u_h0(system, t, t0)
    if not 0 <= n <= config.iterations:
        raise ValueError("n must lie in 0..iterations")
    eng = kam_engine(system, config, max(t, t0), min(t, t0), spec)
    return eng.effective(t, t0, n)


def next_perturbation(system: PulseSystem, n: int, t: float, config: KamConfig,
                      spec: QuadratureSpec = QuadratureSpec(), t0: float | None = None
                      ) -> np.ndarray:
    """Lab-frame ``V_{n+1}(t)`` produced by iteration ``n``."""
    if not 1 <= n <= config.iterations:
        raise ValueError("n must lie in 1..iterations")
    t0 = _default_t0(system, t0)
    eng = kam_engine(system, config, system.support[1], t0, spec)
    return eng.V(n + 1, t)


def kam_propagator(system: PulseSystem, config: KamConfig, t: float, t0: float,
                   spec: QuadratureSpec = QuadratureSpec(),
                   t_dprime: float | None = None) -> np.ndarray:
    """``T_1(t)...T_n(t) U_{H^e_n}(t,t0) T_n(t0)^dagger...T_1(t0)^dagger``.

    ``t_dprime`` splits the effective propagator at an intermediate time
    (with the remainder propagator replaced by the identity); the result
    does not depend on it.
    """
    eng = kam_engine(system, config, t, t0, spec)
    return eng.propagator(t, t0, t_dprime)


def interaction_rep_kam(system: PulseSystem, config: KamConfig, s: float, t: float,
                        t0: float, spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """KAM run on ``H0 = 0``, ``V_1(t; s) = U0(s,t) V_1 U0(t,s)``, mapped back to the lab."""
    eng = kam_engine(system, config, t, t0, spec, s=float(s))
    Ui = eng.propagator(t, t0)
    return u_h0(system, t, s) @ Ui @ u_h0(system, s, t0)


@dataclass(frozen=True)
class GDiagnostic:
    G: np.ndarray
    g: float
    n: int
    params: dict

    def __post_init__(self):
        if not self.g >= 0:
            raise ValueError("g must be nonnegative")


def g_operator(system: PulseSystem, n: int, config: KamConfig,
               spec: QuadratureSpec = QuadratureSpec()) -> GDiagnostic:
    """Leading remainder generator over the pulse and ``g = eps^(2^n) ||G||``."""
    if not 1 <= n <= config.iterations:
        raise ValueError("n must lie in 1..iterations")
    t0, t = system.support
    eng = kam_engine(system, replace(config, iterations=n), t, t0, spec)
    G = eng.remainder_generator(t, t0)
    g = system.epsilon ** (2 ** n) * spectral_norm(G)
    return GDiagnostic(G=G, g=float(g), n=n, params=config.free_times())
