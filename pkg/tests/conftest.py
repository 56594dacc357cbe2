import numpy as np
import pytest

from glcn import DGSpace, Rect, build_structured


@pytest.fixture(scope="session")
def unit_rect():
    return Rect(0.0, 1.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def unit_mesh_n1(unit_rect):
    return build_structured(unit_rect, 1)


@pytest.fixture(scope="session")
def space_n1_k1(unit_mesh_n1):
    return DGSpace(unit_mesh_n1, 1)


@pytest.fixture(scope="session")
def space_n4_k2(unit_rect):
    return DGSpace(build_structured(unit_rect, 4), 2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
