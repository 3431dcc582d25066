import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st
from mpmath import mp

from pulsekam.kam import (KamConfig, d_operator, effective_propagator, g_operator,
                          interaction_rep_kam, kam_propagator, next_perturbation,
                          perturbation_series, resummation_coefficients, type_c_system,
                          w_operator)
from pulsekam.linalg import SIGMA1, SIGMA2, SIGMA3, dagger, spectral_norm, unitarity_defect, unitary_exp
from pulsekam.ooexpand import magnus_propagator, magnus_terms
from pulsekam.system import PulseShape, PulseSystem, conjugate_frame, u_h0

from conftest import delta, make_system, slope

EPS = np.array([0.02, 0.04, 0.08])


# -- closed-form coefficients ---------------------------------------------------

def _exact_coeffs(y):
    """Closed forms in extended precision, used as the reference."""
    mp.dps = 40
    y = mp.mpf(y)
    a = (mp.cos(y) + y * mp.sin(y) - 1) / y**2
    b = (1 - mp.cos(y)) / y**2
    c = (y * mp.cos(y) - mp.sin(y)) / y**3
    d = (mp.sin(y) - y) / y**3
    return complex(0, a), complex(0, b), float(c), float(d)


@pytest.mark.parametrize("y", [1e-6, 3e-3, 1.01e-2, 0.0999, 0.1001, 0.3, 1.7, 6.0])
def test_coefficients_vs_extended_precision(y):
    got = resummation_coefficients(0.5, y)          # y = 2 * eps_k * lam
    for g, w in zip(got, _exact_coeffs(y)):
        assert abs(complex(g) - w) < 1e-13


def test_coefficient_small_argument_limits_symbolic():
    y = sp.symbols("y")
    a = sp.I * (sp.cos(y) + y * sp.sin(y) - 1) / y**2
    b = sp.I * (1 - sp.cos(y)) / y**2
    c = (y * sp.cos(y) - sp.sin(y)) / y**3
    assert sp.limit(a, y, 0) == sp.I / 2
    assert sp.limit(b, y, 0) == sp.I / 2
    assert sp.limit(c, y, 0) == sp.Rational(-1, 3)
    assert np.allclose(resummation_coefficients(1.0, 0.0)[:3], [0.5j, 0.5j, -1 / 3])


def test_alternate_variant_uses_half_argument():
    lam = np.array([0.2, 0.9])
    a, b, c, d = resummation_coefficients(0.7, lam, "alternate")
    a2, b2, c2, _ = resummation_coefficients(0.35, lam)
    assert np.allclose([a, b, c], [a2, b2, c2])
    assert np.allclose(d, c + 1j * b)
    with pytest.raises(ValueError):
        resummation_coefficients(0.7, lam, "other")


# -- the next perturbation -----------------------------------------------------

herm_traceless = st.tuples(*[st.floats(-2, 2)] * 3).map(
    lambda c: c[0] * SIGMA1 + c[1] * SIGMA2 + c[2] * SIGMA3)


@settings(max_examples=40, deadline=None)
@given(herm_traceless, herm_traceless, herm_traceless, st.floats(0.0, 1.5))
def test_resummed_equals_long_series(W, V, D, eps):
    full = perturbation_series(W, V, D, eps)
    series = perturbation_series(W, V, D, eps, truncation=40)
    assert np.allclose(full, series, atol=1e-9)
    assert np.allclose(full, full.conj().T)


def test_zero_generator_gives_zero():
    assert np.allclose(perturbation_series(np.zeros((2, 2)), SIGMA3, SIGMA3, 0.5), 0)


def test_leading_term():
    W, V, D = 0.01 * SIGMA1, SIGMA3, 0.4 * SIGMA2
    eps = 0.1
    got = perturbation_series(W, V, D, eps)
    lead = 0.5j * (W @ (V + D) - (V + D) @ W)
    assert spectral_norm(got - lead) < 2e-3 * spectral_norm(lead)


def _cohomology_residual(S, cfg, t, h=1e-4):
    eps = S.epsilon
    T = lambda u: unitary_exp(eps * w_operator(S, 1, u, cfg), check=False)
    dT = (-T(t + 2 * h) + 8 * T(t + h) - 8 * T(t - h) + T(t - 2 * h)) / (12 * h)
    if cfg.kind == "B":
        He = S.h0(t) + eps * d_operator(S, 1, t, cfg)
    elif cfg.kind == "C":
        He = S.h0(t) + eps * type_c_system(S, cfg.t1).shift(t)
    else:
        He = S.h0(t)
    Tt = T(t)
    return dagger(Tt) @ S.hamiltonian(t) @ Tt - He - dagger(Tt) @ (1j * dT)


@pytest.mark.parametrize("kind", "ABC")
@pytest.mark.parametrize("eps", [0.3, 1.0, 2.0])
def test_next_perturbation_vs_finite_difference_cohomology(kind, eps):
    S = make_system(eps, 1.3)
    cfg = KamConfig(kind, 1, t1=0.4, t1p=0.3)
    R = _cohomology_residual(S, cfg, 0.62)
    V2 = next_perturbation(S, 1, 0.62, cfg)
    assert spectral_norm(R - eps**2 * V2) < 1e-6


def test_alternate_coefficients_fail_cohomology():
    S = make_system(1.0, 1.3)
    cfg = KamConfig("B", 1, t1=0.4, t1p=0.3, coefficients="alternate")
    R = _cohomology_residual(S, cfg, 0.62)
    assert spectral_norm(R - next_perturbation(S, 1, 0.62, cfg)) > 1e-4


def test_next_perturbation_vanishes_without_pulse():
    S = make_system(0.5, 0.0)
    assert np.allclose(next_perturbation(S, 1, 0.6, KamConfig("B", 1, t1=0.2, t1p=0.1)), 0,
                       atol=1e-14)


# -- D and W -------------------------------------------------------------------

def test_d_operator():
    S = make_system(0.5, 1.4)
    assert np.allclose(d_operator(S, 1, 0.3, KamConfig("A", 1)), 0)
    cfg = KamConfig("B", 1, t1=0.35, t1p=0.2)
    assert np.allclose(d_operator(S, 1, 0.35, cfg), SIGMA3, atol=1e-13)
    for t in (0.0, 0.5, 0.9):
        want = conjugate_frame(S, SIGMA3, 0.35, t)
        assert np.allclose(d_operator(S, 1, t, cfg), want, atol=1e-11)
    assert np.allclose(d_operator(S, 1, 0.5, KamConfig("C", 1, t1=0.35)), 0)
    with pytest.raises(ValueError):
        d_operator(S, 2, 0.5, cfg)


def test_w_operator():
    S = make_system(0.5, 1.4)
    cfg = KamConfig("B", 2, t1=0.5, t1p=0.22, t2=0.66, t2p=0.8)
    assert np.allclose(w_operator(S, 1, 0.22, cfg), 0, atol=1e-13)
    assert np.allclose(w_operator(S, 2, 0.8, cfg), 0, atol=1e-13)
    assert np.allclose(w_operator(make_system(0.5, 0.0), 1, 0.7, KamConfig("B", 1, t1=0.3)), 0,
                       atol=1e-13)
    W = w_operator(S, 1, 0.7, KamConfig("A", 1, t1p=0.0))
    assert np.allclose(W, magnus_terms(S, 0.7, 0.0).M1, atol=1e-10)


# -- propagators ---------------------------------------------------------------

def test_effective_propagator_limits():
    S = make_system(0.5, 1.4)
    U0 = u_h0(S, 1, 0)
    assert np.allclose(effective_propagator(S, 0, 1, 0, KamConfig("B", 2)), U0)
    assert np.allclose(effective_propagator(S, 2, 1, 0, KamConfig("A", 2)), U0, atol=1e-13)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from("ABC"), st.integers(1, 2), st.floats(0.0, 2.0), st.floats(0.0, 4 * np.pi),
       st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_kam_unitary_on_random_configs(kind, n, eps, A, times):
    cfg = KamConfig(kind, n, *times)
    S = make_system(eps, A)
    assert unitarity_defect(effective_propagator(S, n, 1, 0, cfg)) < 1e-12
    assert unitarity_defect(kam_propagator(S, cfg, 1, 0)) < 1e-10


def test_type_a_first_iteration_is_magnus(rng):
    for _ in range(5):
        S = make_system(rng.uniform(0.05, 2), rng.uniform(0.1, 13))
        U = kam_propagator(S, KamConfig("A", 1, t1p=0.0), 1, 0)
        assert spectral_norm(U - magnus_propagator(S, 1, 1, 0)) < 1e-10


@pytest.mark.parametrize("kind", "ABC")
def test_eps_zero_gives_u0(kind):
    S = make_system(0.0, 2.2)
    cfg = KamConfig(kind, 2, 0.3, 0.6, 0.2, 0.9)
    assert np.allclose(kam_propagator(S, cfg, 1, 0), u_h0(S, 1, 0), atol=1e-12)


def test_type_b_exact_without_pulse():
    S = make_system(0.5, 0.0)
    U = kam_propagator(S, KamConfig("B", 1, t1=0.3, t1p=0.7), 0.9, 0.1)
    assert spectral_norm(U - unitary_exp(0.5 * 0.8 * SIGMA3)) < 1e-10


def test_type_c_details():
    S = make_system(0.5, 1.0)
    P = type_c_system(S, 0.7)
    assert np.allclose(P.perturbation(0.7), 0, atol=1e-14)
    U = kam_propagator(S, KamConfig("C", 1, t1=0.7, t1p=0.0), 1, 0)
    assert unitarity_defect(U) < 1e-12 and np.isfinite(delta(U, S))
    S0 = make_system(0.0, 1.0)
    assert np.allclose(kam_propagator(S0, KamConfig("C", 1, t1=0.7, t1p=0.3), 1, 0),
                       kam_propagator(S0, KamConfig("A", 1, t1p=0.3), 1, 0), atol=1e-13)


@pytest.mark.parametrize("kind", "ABC")
def test_first_iteration_remainder_is_second_order(kind):
    cfg = KamConfig(kind, 1, t1=0.5, t1p=0.22)
    d = [delta(kam_propagator(make_system(e, 1.0), cfg, 1, 0), make_system(e, 1.0))
         for e in EPS]
    assert abs(slope(EPS, d) - 2) < 0.2


def test_commutator_truncation_converges_to_resummed():
    S = make_system(0.5, 1.0)
    base = KamConfig("B", 2, 0.5, 0.22, 0.66, 0.8)
    ref = kam_propagator(S, base, 1, 0)
    gaps = [spectral_norm(kam_propagator(S, KamConfig("B", 2, 0.5, 0.22, 0.66, 0.8,
                                                      truncation=k), 1, 0) - ref)
            for k in (2, 4, 8)]
    assert gaps[0] > gaps[1] > gaps[2] and gaps[2] < 1e-8


def test_t_dprime_invariance():
    S = make_system(0.8, 1.5)
    cfg = KamConfig("B", 2, 0.5, 0.22, 0.66, 0.8)
    ref = kam_propagator(S, cfg, 1, 0)
    for tpp in (0.0, 0.37, 1.0):
        assert spectral_norm(kam_propagator(S, cfg, 1, 0, t_dprime=tpp) - ref) < 1e-12


def test_interaction_representation():
    S = make_system(0.6, 2.0)
    cfg = KamConfig("B", 2, 0.5, 0.22, 0.66, 0.8)
    ref = kam_propagator(S, cfg, 1, 0)
    for s in (0.0, 0.4, 1.0):
        assert spectral_norm(interaction_rep_kam(S, cfg, s, 1, 0) - ref) < 1e-10
    S0 = make_system(0.0, 2.0)
    assert np.allclose(interaction_rep_kam(S0, cfg, 0.3, 1, 0), u_h0(S0, 1, 0), atol=1e-12)


# -- g diagnostic ----------------------------------------------------------------

def test_g_vanishes_without_pulse():
    assert g_operator(make_system(0.5, 0.0), 1, KamConfig("B", 1, t1=0.5, t1p=0.2)).g < 1e-14


def test_g_tracks_first_iteration_error():
    S = make_system(0.5, 1.0)
    cfg = KamConfig("B", 1, t1=0.5, t1p=0.22)
    g = g_operator(S, 1, cfg).g
    assert 0.5 < g / delta(kam_propagator(S, cfg, 1, 0), S) < 2


def test_config_validation():
    for bad in (dict(kind="D"), dict(iterations=3), dict(truncation=0),
                dict(truncation="full"), dict(coefficients="x"), dict(x0=0)):
        with pytest.raises(ValueError):
            KamConfig(**bad)


def test_second_iteration_remainder_orders():
    # For sigma_3 coupling the leading fourth-order remainder cancels (the rotated
    # perturbation stays in the sigma_2/sigma_3 plane), leaving fifth order.
    # A sigma_1 admixture in the static operator restores the generic fourth order.
    cfg = KamConfig("B", 2, 0.5, 0.22, 0.66, 0.8)
    plain = [delta(kam_propagator(make_system(e, 1.0), cfg, 1, 0), make_system(e, 1.0))
             for e in EPS]
    assert abs(slope(EPS, plain) - 5) < 0.3
    mixed = []
    for e in EPS:
        S = PulseSystem(PulseShape(area=1.0), e, static=SIGMA3 + 0.3 * SIGMA1)
        mixed.append(delta(kam_propagator(S, cfg, 1, 0), S))
    assert abs(slope(EPS, mixed) - 4) < 0.3
