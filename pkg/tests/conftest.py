from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tvmc_anneal.ansatz import init_driving_ground
from tvmc_anneal.lattice import Lattice, diamond_manifest, sample_couplings
from tvmc_anneal.model import ProblemHamiltonian, make_schedule

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.register_profile("thorough", max_examples=400, deadline=None)
settings.load_profile("default")


def random_psi(n, orders, rng, scale=0.3):
    """Jastrow state with every active parameter drawn complex Gaussian."""
    psi = init_driving_ground(n, orders)
    theta = scale * (rng.normal(size=psi.n_params) + 1j * rng.normal(size=psi.n_params))
    return psi.with_vector(theta)


def random_spins(n, rng, batch=None):
    shape = (n,) if batch is None else (batch, n)
    return (1 - 2 * rng.integers(0, 2, size=shape)).astype(np.int8)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def schedule():
    return make_schedule("trigonometric", 7.0)


@pytest.fixture
def diamond8():
    return diamond_manifest(8)


@pytest.fixture
def glass8(diamond8):
    return sample_couplings(diamond8, 0)


@pytest.fixture
def ham8(glass8, schedule):
    return ProblemHamiltonian(glass8, schedule)


@pytest.fixture
def pair_lattice():
    return Lattice(2, ((0, 1),), geometry_tag="pair")


# -- acceptance verdicts -------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda x: int(x.split()[1])):
            terminalreporter.write_line(line)
