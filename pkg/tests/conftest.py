import numpy as np
import pytest

from pulsekam.linalg import spectral_norm
from pulsekam.oracle import SolverSpec, reference_propagator
from pulsekam.system import PulseShape, PulseSystem

TIGHT = SolverSpec(rel_tol=1e-13, abs_tol=1e-14)


def make_system(eps=0.5, area=1.0, form="sin2"):
    return PulseSystem(PulseShape(form, area), eps)


def exact(system, t=1.0, t0=0.0):
    return reference_propagator(system, t0, t, TIGHT, estimate_error=False).U


def delta(U, system, t=1.0, t0=0.0):
    return float(spectral_norm(U - exact(system, t, t0)))


def slope(xs, ys):
    return float(np.polyfit(np.log(xs), np.log(ys), 1)[0])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
