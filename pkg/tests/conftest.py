import numpy as np
import pytest


def fd_grad(f, X, eps=1e-6):
    """Central finite differences of a scalar function of an array."""
    X = np.asarray(X, dtype=float)
    G = np.zeros_like(X)
    it = np.nditer(X, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        Xp = X.copy()
        Xm = X.copy()
        Xp[idx] += eps
        Xm[idx] -= eps
        G[idx] = (f(Xp) - f(Xm)) / (2 * eps)
    return G


@pytest.fixture
def rng():
    return np.random.default_rng(0)
