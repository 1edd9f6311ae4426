"""Shared fixtures: small grids, law bundles and discrete kernels."""

import numpy as np
import pytest

from nchs import Grid, Kernel, build_kernel, get_laws


@pytest.fixture(scope="session")
def laws_log():
    return get_laws("log-degenerate")


@pytest.fixture(scope="session")
def laws_quartic():
    return get_laws("constant-mobility-quartic")


@pytest.fixture(scope="session")
def grid16():
    return Grid(16, 16, 1.0, 1.0)


@pytest.fixture(scope="session")
def grid_odd():
    # deliberately anisotropic and non-square to catch index swaps
    return Grid(6, 5, 1.0, 0.8)


@pytest.fixture(scope="session")
def dk16(grid16):
    return build_kernel(Kernel("gaussian", length_scale=0.2, amplitude=0.8), grid16)


@pytest.fixture(scope="session")
def dk_odd(grid_odd):
    return build_kernel(Kernel("gaussian", length_scale=0.25, amplitude=1.0), grid_odd)


def pytest_configure(config):
    np.seterr(all="raise", under="ignore")
