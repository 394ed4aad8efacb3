import numpy as np
import pytest


def central_diff_grad(f, x, h=1e-6):
    """Central finite-difference gradient of a scalar function of a vector."""

    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        g[i] = (f(xp) - f(xm)) / (2.0 * step)
    return g


def central_diff_jac(f, x, h=1e-6):
    """Central finite-difference Jacobian of a vector function of a vector."""

    x = np.asarray(x, dtype=float)
    f0 = np.asarray(f(x), dtype=float)
    J = np.zeros((f0.size, x.size))
    for i in range(x.size):
        step = h * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += step
        xm[i] -= step
        J[:, i] = (np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * step)
    return J


def assert_close(actual, expected, rtol, atol=0.0, label=""):
    actual = np.asarray(actual, dtype=float)
    expected = np.asarray(expected, dtype=float)
    np.testing.assert_allclose(actual, expected, rtol=rtol, atol=atol, err_msg=label)


@pytest.fixture
def rng():
    return np.random.default_rng(20240815)
