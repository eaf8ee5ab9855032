import functools

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from curvem.mesh import family_mesh, gen_curved_top_cube

settings.register_profile(
    "default", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture]
)
settings.load_profile("default")


@functools.lru_cache(maxsize=None)
def cached_family(family: str, level: int):
    return family_mesh(family, level)


@functools.lru_cache(maxsize=None)
def cached_cube(n: int, amplitude: float):
    return gen_curved_top_cube(n, amplitude)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
