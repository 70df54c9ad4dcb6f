from __future__ import annotations

import numpy as np
import pytest

from rdgsolver import RdgSpace, TensorMesh, build_mesh, build_space, graded_breakpoints, uniform_mesh


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240607)


@pytest.fixture
def periodic_line() -> TensorMesh:
    return uniform_mesh(16, 0.0, 2.0 * np.pi, periodic=True)


@pytest.fixture
def bounded_line() -> TensorMesh:
    return uniform_mesh(12, -1.0, 1.0, periodic=False)


@pytest.fixture
def graded_line() -> TensorMesh:
    return build_mesh(1, [graded_breakpoints(0.0, 1.0, 10, 2.0, seed=3)], False)


@pytest.fixture
def periodic_square() -> TensorMesh:
    return uniform_mesh((6, 6), (0.0, 0.0), (2.0 * np.pi, 2.0 * np.pi), periodic=True)


@pytest.fixture
def bounded_square() -> TensorMesh:
    return uniform_mesh((5, 4), (0.0, 0.0), (1.0, 1.0), periodic=False)


@pytest.fixture(params=[2, 5], ids=['k2', 'k5'])
def order(request: pytest.FixtureRequest) -> int:
    return request.param


@pytest.fixture
def periodic_space(periodic_line: TensorMesh, order: int) -> RdgSpace:
    return build_space(periodic_line, order)


@pytest.fixture
def bounded_space(bounded_line: TensorMesh, order: int) -> RdgSpace:
    return build_space(bounded_line, order)

