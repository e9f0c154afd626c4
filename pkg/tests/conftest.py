import numpy as np
import pytest

from homog.langevin_core import ModelParams
from homog.presets import get_preset
from homog.spectral.solver import solve_diffusivity


@pytest.fixture(scope="session")
def cosine():
    return get_preset("cosine-gradient")


@pytest.fixture(scope="session")
def nongradient():
    return get_preset("two-mode-nongradient")


@pytest.fixture(scope="session")
def unit_params():
    return ModelParams(1.0, 1.0, 1)


@pytest.fixture(scope="session")
def cosine_solution(cosine, unit_params):
    return solve_diffusivity(cosine, unit_params)


@pytest.fixture(scope="session")
def nongradient_solution(nongradient):
    return solve_diffusivity(nongradient, ModelParams(1.0, 1.0, 2))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_drift(rng, n=1, kmax=3, gradient=False):
    """Random real drift with modes |k_i| <= kmax."""
    from homog.langevin_core import DriftSpec, drift_from_potential
    import itertools

    modes = [k for k in itertools.product(range(-kmax, kmax + 1), repeat=n) if any(k)]
    half = [k for k in modes if next(c for c in k if c != 0) > 0]
    if gradient:
        pot = {}
        for k in half:
            c = complex(rng.normal(), rng.normal()) / (1 + sum(map(abs, k)))
            pot[k if n > 1 else k[0]] = c
            mk = tuple(-c_ for c_ in k)
            pot[mk if n > 1 else mk[0]] = np.conj(c)
        return drift_from_potential(pot, n=n)
    coeffs = {}
    for k in half:
        c = (rng.normal(size=n) + 1j * rng.normal(size=n)) / (1 + sum(map(abs, k)))
        coeffs[k] = c
        coeffs[tuple(-c_ for c_ in k)] = np.conj(c)
    return DriftSpec.from_mapping(n, coeffs)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
