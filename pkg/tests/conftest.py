import numpy as np
import pytest

from emtstudio.gp import Dataset, Hyperparams, KernelKind, kernel_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_gp_draw(seed: int, n: int, dim: int, lengthscale: float, sigma: float = 1.0,
                 kind: KernelKind = KernelKind.SQUARED_EXPONENTIAL) -> Dataset:
    """Sample a noiseless function draw from a GP prior as test data."""
    r = np.random.default_rng(seed)
    X = r.uniform(size=(n, dim))
    theta = Hyperparams(sigma, np.full(dim, lengthscale))
    K = kernel_matrix(kind, theta, X) + 1e-10 * np.eye(n)
    y = np.linalg.cholesky(K) @ r.normal(size=n)
    return Dataset(X, y)
