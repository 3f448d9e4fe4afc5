import numpy as np
import pytest


def central_diff(f, x, h=1e-6):
    """Plain central differences, kept separate from the package's own checker."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a, n):
    a, n = np.ravel(a), np.ravel(n)
    scale = max(np.abs(a).max(), np.abs(n).max())
    if scale == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-2 * scale)))


def unit_cols(rng, d, n):
    M = rng.standard_normal((d, n))
    return M / np.linalg.norm(M, axis=0)


def antipodal_pair(d=3, per=4, axis=0):
    """Two instances placed at +e and -e."""
    e = np.zeros(d)
    e[axis] = 1.0
    X = np.hstack([np.tile(e[:, None], per), np.tile(-e[:, None], per)])
    labels = np.repeat([0, 1], per)
    return X, labels


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
