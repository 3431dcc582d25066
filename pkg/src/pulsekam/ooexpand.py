"""Order-by-order expansions: Magnus, Dyson, Poincare-Von Zeipel, Van Vleck.

All terms are built in the interaction frame of ``U0`` anchored at the grid
start ``r``. With ``P(t) = U0(t, r)`` and ``Vt = P^dagger V P`` the running
integrals ``F(t) = int_r^t Vt`` carry every time-ordered integral, and an
operator ``X`` computed in that frame at time ``t`` is returned to the lab
frame as ``P(t) X P(t)^dagger``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .frames import Sampled, sample_system
from .linalg import commutator, dagger, hermitize, unitary_exp
from .quad import QuadratureSpec, integrate_op, nested_integral
from .system import PulseSystem, u_h0

SCHEMES = ("magnus", "dyson", "pvz", "vanvleck")
_SCHEME_ALIASES = {"magnus": "magnus", "dyson": "dyson", "pvz": "pvz",
                   "poincare-von-zeipel": "pvz", "vanvleck": "vanvleck",
                   "van-vleck": "vanvleck", "vv": "vanvleck"}
MAX_ORDER = {"magnus": 3, "dyson": 2, "pvz": 2, "vanvleck": 2}


class ConfigError(ValueError):
    """Expansion configuration violates a structural constraint."""


@dataclass(frozen=True)
class MagnusTerms:
    """Hermitian, epsilon-independent Magnus generators at ``(t; t0)``."""

    M1: np.ndarray
    M2: np.ndarray
    M3: np.ndarray

    def exponent(self, epsilon: float, n: int = 3) -> np.ndarray:
        terms = (self.M1, self.M2, self.M3)[:n]
        return sum(epsilon ** (k + 1) * M for k, M in enumerate(terms))


@dataclass(frozen=True)
class OOConfig:
    """Scheme, order and free parameters of an order-by-order expansion.

    ``v`` is the single index at which ``D_v(t) = U0(t, t_v) V_v(t_v) U0(t_v, t)``
    is used instead of zero (``None`` means every ``D_k = 0``). ``t_primes``
    holds the lower limits ``t_k'`` of the generators; ``None`` entries (or a
    missing tuple) default to ``t0``.
    """

    scheme: str = "magnus"
    order: int = 1
    v: int | None = None
    t_v: float | None = None
    t_primes: tuple = field(default=())

    def __post_init__(self):
        scheme = _SCHEME_ALIASES.get(str(self.scheme).lower())
        if scheme is None:
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        object.__setattr__(self, "scheme", scheme)
        if not 1 <= self.order <= MAX_ORDER[scheme]:
            raise ConfigError(f"{scheme} supports orders 1..{MAX_ORDER[scheme]}")
        if self.v is not None:
            if scheme in ("magnus", "dyson"):
                raise ConfigError(f"{scheme} has no D choice")
            if not 1 <= self.v <= self.order:
                raise ConfigError("D index v must lie in 1..order")
            if self.t_v is None:
                raise ConfigError("a nonzero D choice needs its anchor time t_v")
        object.__setattr__(self, "t_primes", tuple(self.t_primes))
        if len(self.t_primes) > self.order:
            raise ConfigError("more t' values than expansion order")

    def t_prime(self, k: int, t0: float) -> float:
        if k <= len(self.t_primes) and self.t_primes[k - 1] is not None:
            return float(self.t_primes[k - 1])
        return float(t0)


def _check_inside(grid, *times):
    for x in times:
        if x is not None and not grid.lo - 1e-12 <= x <= grid.hi + 1e-12:
            raise ConfigError(f"time {x} lies outside the evaluation range")


# -- Magnus -----------------------------------------------------------------

def _magnus_frame_terms(S: Sampled, t: float, t0: float, n: int):
    """Magnus generators in the reference frame, as running integrals."""
    g = S.grid
    F1 = S.F1
    m1 = F1.node_values - F1(t0)
    out = [F1(t) - F1(t0)]
    if n >= 2:
        F2 = g.cumulative(0.5j * commutator(m1, S.Vt))
        out.append(F2(t) - F2(t0))
        if n >= 3:
            m2 = F2.node_values - F2(t0)
            v3 = 0.5j * commutator(m2, S.Vt) - commutator(m1, commutator(m1, S.Vt)) / 12.0
            F3 = g.cumulative(v3)
            out.append(F3(t) - F3(t0))
    return [hermitize(x) for x in out]


def magnus_terms(system: PulseSystem, t: float, t0: float,
                 spec: QuadratureSpec = QuadratureSpec(), frame: float | None = None
                 ) -> MagnusTerms:
    """``M1, M2, M3`` at ``(t; t0)``.

    By default the terms come from running integrals on a fixed panel grid.
    With ``frame=s`` they are instead computed as nested integrals of the
    interaction-picture perturbation anchored at ``s`` (adaptive panel
    doubling) and rotated back with ``U0(t, s)``; the two routes agree, which
    is the statement that Magnus does not depend on ``s``.
    """
    t, t0 = float(t), float(t0)
    d = system.dim
    if t == t0:
        z = np.zeros((d, d), dtype=complex)
        return MagnusTerms(z, z.copy(), z.copy())
    if frame is None:
        S = sample_system(system, [t0, t], spec)
        terms = _magnus_frame_terms(S, t, t0, 3)
        Pt = S.problem.frame(t)
        M = [hermitize(Pt @ x @ dagger(Pt)) for x in terms]
        return MagnusTerms(*M)
    s = float(frame)
    lo, hi = min(t0, t), max(t0, t)

    def H(u):
        U = u_h0(system, s, u)
        return U @ system.static @ dagger(U)

    K1 = integrate_op(H, lo, hi, spec)
    K2 = nested_integral(2, H, lo, hi, spec)
    K3 = nested_integral(3, H, lo, hi, spec)
    if t < t0:
        # U(t, t0) = U(t0, t)^dagger: the generator of the reversed interval
        # is minus that of the forward one, term by term in eps.
        K1, K2, K3 = -K1, -K2, -K3
    U = u_h0(system, t, s)
    return MagnusTerms(*(hermitize(U @ K @ dagger(U)) for K in (K1, K2, K3)))


def magnus_propagator(system: PulseSystem, n: int, t: float, t0: float,
                      spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """``exp(-i sum_k eps^k M_k) U0(t, t0)``, unitary at every order."""
    if not 1 <= n <= 3:
        raise ConfigError("Magnus order must be 1, 2 or 3")
    eps = system.epsilon
    S = sample_system(system, [t0, t], spec)
    terms = _magnus_frame_terms(S, t, t0, n)
    K = sum(eps ** (k + 1) * x for k, x in enumerate(terms))
    return S.problem.frame(t) @ unitary_exp(K, check=False) @ dagger(S.problem.frame(t0))


# -- Dyson ------------------------------------------------------------------

def dyson_propagator(system: PulseSystem, n: int, t: float, t0: float,
                     spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """Truncated Dyson series; not unitary and never reunitarized."""
    if not 1 <= n <= 2:
        raise ConfigError("Dyson order must be 1 or 2")
    eps = system.epsilon
    S = sample_system(system, [t0, t], spec)
    d = system.dim
    m1 = S.F1.node_values - S.F1(t0)
    Ui = np.eye(d, dtype=complex) - 1j * eps * (S.F1(t) - S.F1(t0))
    if n == 2:
        F = S.grid.cumulative(S.Vt @ m1)
        Ui = Ui - eps ** 2 * (F(t) - F(t0))
    return S.problem.frame(t) @ Ui @ dagger(S.problem.frame(t0))


# -- Poincare-Von Zeipel and Van Vleck ----------------------------------------

@dataclass
class OOGenerators:
    """Lab-frame generators ``W_k`` at ``t`` and ``t0`` plus ``D_v(t0)``."""

    W_t: list
    W_t0: list
    D_t0: np.ndarray | None


def oo_generators(system: PulseSystem, config: OOConfig, t: float, t0: float,
                  spec: QuadratureSpec = QuadratureSpec()) -> OOGenerators:
    """Generators ``W_1..W_n`` of the order-by-order transformation.

    ``W_k(t) = int_{t_k'}^t U0(t,u) [V_k(u) - D_k(u)] U0(u,t) du`` with the
    second-order perturbation ``V_2 = (i/2) [W_1, V_1 + D_1]``.
    """
    if config.scheme not in ("pvz", "vanvleck"):
        raise ConfigError("generators exist only for the PVZ and Van Vleck schemes")
    tps = [config.t_prime(k, t0) for k in range(1, config.order + 1)]
    S = sample_system(system, [t0, t, *tps, *([] if config.t_v is None else [config.t_v])], spec)
    _check_inside(S.grid, t, t0, config.t_v, *tps)
    g = S.grid
    d = system.dim
    zero = np.zeros((d, d), dtype=complex)

    D1 = S.rotated(config.t_v) if config.v == 1 else zero
    tp1 = tps[0]

    def W1_frame(times, F_at):
        return F_at - S.F1(tp1) - np.multiply.outer(np.asarray(times) - tp1, D1)

    Wf = {1: (W1_frame(t, S.F1(t)), W1_frame(t0, S.F1(t0)))}
    D_frame = D1 if config.v == 1 else None
    if config.order == 2:
        W1_nodes = W1_frame(g.nodes, S.F1.node_values)
        V2 = 0.5j * commutator(W1_nodes, S.Vt + D1)
        F2 = g.cumulative(V2)
        if config.v == 2:
            tv = config.t_v
            D2 = 0.5j * commutator(W1_frame(tv, S.F1(tv)), S.rotated(tv) + D1)
            D_frame = D2
        else:
            D2 = zero
        tp2 = tps[1]
        Wf[2] = tuple(F2(x) - F2(tp2) - (x - tp2) * D2 for x in (t, t0))
    Pt, P0 = S.problem.frame(t), S.problem.frame(t0)
    W_t = [hermitize(Pt @ Wf[k][0] @ dagger(Pt)) for k in sorted(Wf)]
    W_t0 = [hermitize(P0 @ Wf[k][1] @ dagger(P0)) for k in sorted(Wf)]
    D_t0 = None if D_frame is None else hermitize(P0 @ D_frame @ dagger(P0))
    return OOGenerators(W_t, W_t0, D_t0)


def _oo_propagator(system, config, t, t0, spec, product: bool):
    eps = system.epsilon
    gen = oo_generators(system, config, t, t0, spec)
    U0 = u_h0(system, t, t0)
    if gen.D_t0 is not None:
        U0 = U0 @ unitary_exp((t - t0) * eps ** config.v * gen.D_t0, check=False)
    if product:
        left = [unitary_exp(eps ** (k + 1) * W, check=False) for k, W in enumerate(gen.W_t)]
        right = [unitary_exp(eps ** (k + 1) * W, check=False) for k, W in enumerate(gen.W_t0)]
        out = U0
        for T in reversed(left):
            out = T @ out
        for T in reversed(right):
            out = out @ dagger(T)
        return out
    Tt = unitary_exp(sum(eps ** (k + 1) * W for k, W in enumerate(gen.W_t)), check=False)
    T0 = unitary_exp(sum(eps ** (k + 1) * W for k, W in enumerate(gen.W_t0)), check=False)
    return Tt @ U0 @ dagger(T0)


def pvz_propagator(system: PulseSystem, config: OOConfig, t: float, t0: float,
                   spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """``T(t) U0(t,t0) exp(-i (t-t0) eps^v D_v(t0)) T(t0)^dagger``, ``T = exp(-i sum eps^k W_k)``."""
    if config.scheme != "pvz":
        config = OOConfig("pvz", config.order, config.v, config.t_v, config.t_primes)
    return _oo_propagator(system, config, t, t0, spec, product=False)


def vanvleck_propagator(system: PulseSystem, config: OOConfig, t: float, t0: float,
                        spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """Product form ``T_1(t) T_2(t) U_e T_2(t0)^dagger T_1(t0)^dagger``."""
    if config.scheme != "vanvleck":
        config = OOConfig("vanvleck", config.order, config.v, config.t_v, config.t_primes)
    return _oo_propagator(system, config, t, t0, spec, product=True)


def oo_propagator(system: PulseSystem, config: OOConfig, t: float, t0: float,
                  spec: QuadratureSpec = QuadratureSpec()) -> np.ndarray:
    """Dispatch on ``config.scheme``."""
    if config.scheme == "magnus":
        return magnus_propagator(system, config.order, t, t0, spec)
    if config.scheme == "dyson":
        return dyson_propagator(system, config.order, t, t0, spec)
    if config.scheme == "pvz":
        return pvz_propagator(system, config, t, t0, spec)
    return vanvleck_propagator(system, config, t, t0, spec)
