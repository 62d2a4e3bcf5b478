"""Shared trained models; the acceptance runs are the expensive part of the suite."""

import pytest

from lgpr.data import gen_antiphase, gen_heteroscedastic, gen_sshape
from lgpr.kernels import AnnealingSchedule
from lgpr.optimize import TrainConfig, train

# the training recipe used for the mixture experiments
MIXTURE_RECIPE = dict(inducing=30, iterations=2000, samples=1, annealing=AnnealingSchedule(1.0, 1.002, 50.0),
                      latent_step_scale=0.1, restarts=4, seed=0)


ACCEPTANCE = {}


def record(number, title, ok, detail):
    """Keep one result line per acceptance criterion for the terminal summary."""
    ACCEPTANCE[number] = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])


@pytest.fixture(scope="session")
def antiphase_data():
    return gen_antiphase(200, seed=0)


@pytest.fixture(scope="session")
def antiphase_model(antiphase_data):
    return train(antiphase_data, TrainConfig(components=2, **MIXTURE_RECIPE))


@pytest.fixture(scope="session")
def antiphase_single(antiphase_data):
    return train(antiphase_data, TrainConfig(components=1, **MIXTURE_RECIPE))


@pytest.fixture(scope="session")
def hetero_data():
    return gen_heteroscedastic(500, seed=0)


@pytest.fixture(scope="session")
def hetero_model(hetero_data):
    return train(hetero_data, TrainConfig(components=2, component_kernels=["se", "se+white"], **MIXTURE_RECIPE))


@pytest.fixture(scope="session")
def sshape_data():
    return gen_sshape(300, seed=0)


@pytest.fixture(scope="session")
def sshape_model(sshape_data):
    return train(sshape_data, TrainConfig(components=3, **MIXTURE_RECIPE))
