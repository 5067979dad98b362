import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

LAZY5 = [[0, 0, 0.2], [1, 0, 0.2], [-1, 0, 0.2], [0, 1, 0.2], [0, -1, 0.2]]


@pytest.fixture(scope="session")
def lazy_walk():
    from polymerlab.walk import load_walk

    return load_walk(LAZY5)


@pytest.fixture(scope="session")
def default_table():
    from polymerlab.walk import build_kernel_table, load_walk

    return build_kernel_table(load_walk(), 128, slices=48)


def grid_points(n=7, span=3.0):
    ax = np.linspace(-span, span, n)
    X, Y = np.meshgrid(ax, ax, indexing="ij")
    return np.stack([X, Y], axis=-1)
