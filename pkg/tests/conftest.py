import numpy as np
import pytest

import hamtomo.kernels


@pytest.fixture(scope="session", autouse=True)
def _warm_kernels():
    hamtomo.kernels.warmup()


def random_hermitian(seed, scale=1.0):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    return scale * 0.5 * (a + a.conj().T)


def random_gauge(seed):
    from hamtomo.model import GaugePhases

    rng = np.random.default_rng(seed)
    return GaugePhases(*rng.uniform(0.0, 2.0 * np.pi, 3))


def random_state(seed):
    rng = np.random.default_rng(seed)
    psi = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    return psi / np.linalg.norm(psi)


@pytest.fixture
def hermitian_factory():
    return random_hermitian


@pytest.fixture
def gauge_factory():
    return random_gauge
