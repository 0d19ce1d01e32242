import numpy as np
import pytest

from barrier_blo.problems import make_quadratic_testbed


@pytest.fixture
def toy():
    """f = 1/2 ||z||^2, g = 1/2 (y - x)^2 on R x R."""
    return make_quadratic_testbed(n=1)


def numeric_grad(fun, z, h=1e-6):
    """Plain central differences, written independently of the package oracle."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    for i in range(z.size):
        e = np.zeros_like(z)
        e[i] = h
        out[i] = (fun(z + e) - fun(z - e)) / (2 * h)
    return out
