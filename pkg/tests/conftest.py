"""Shared test configuration: deterministic hypothesis runs, array helpers."""

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "ci",
    derandomize=True,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(20260814))


def make_field(dims, seed, kind="smooth"):
    """Seeded float32 test field: smooth sinusoids plus mild noise."""
    g = np.random.Generator(np.random.PCG64(seed))
    nx, ny, nz = dims
    x = np.linspace(0.0, 1.0, nx)[:, None, None]
    y = np.linspace(0.0, 1.0, ny)[None, :, None]
    z = np.linspace(0.0, 1.0, nz)[None, None, :]
    if kind == "smooth":
        f = (np.sin(4.1 * x + 1.3) * np.cos(3.7 * y)
             + 0.5 * np.sin(5.3 * z + 0.2)
             + 0.05 * g.standard_normal((nx, ny, nz)))
    elif kind == "noise":
        f = g.standard_normal((nx, ny, nz))
    else:
        raise ValueError(kind)
    return np.asarray(f, dtype=np.float32)
