import numpy as np
import pytest

from stapnet.scene import ArrayGeometry, ClutterConfig, ScenarioConfig, build_scenario


@pytest.fixture(scope="session")
def original():
    return build_scenario(ScenarioConfig())


@pytest.fixture(scope="session")
def clutter_free():
    return build_scenario(ScenarioConfig(clutter=ClutterConfig(density=0.0)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_unitary_basis(rng, L, r):
    A = rng.standard_normal((L, r)) + 1j * rng.standard_normal((L, r))
    Q, _ = np.linalg.qr(A)
    return Q


def random_hpd(rng, L, cond=1e3):
    Q = random_unitary_basis(rng, L, L)
    w = np.logspace(0, np.log10(cond), L)
    return (Q * w) @ Q.conj().T


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is not None and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES):
            terminalreporter.write_line(line)
