from __future__ import annotations

import logging

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rdgsolver import (
    InvalidElementError, NonMonotoneBreakpointsError, PointOutsideDomainError, StencilKind, TooFewElementsError,
    TraceSide, UnsupportedDimensionError, build_mesh, graded_breakpoints, regularity_ratio, stencil_of,
    stencil_positions, uniform_mesh
)


def test_uniform_mesh_shape() -> None:
    mesh = uniform_mesh(5, 0.0, 1.0)

    assert mesh.dim == 1
    assert mesh.shape == (5, )
    assert mesh.n_elements == 5
    assert mesh.h_max == pytest.approx(0.2)
    assert mesh.h_min == pytest.approx(0.2)
    assert regularity_ratio(mesh) == pytest.approx(1.0)


def test_linear_numbering_direction_one_fastest(bounded_square) -> None:
    assert bounded_square.shape == (5, 4)
    assert bounded_square.linear_index((2, 3)) == 17
    assert bounded_square.multi_index(17) == (2, 3)
    assert bounded_square.multi_index(1) == (1, 0)

    assert_allclose(bounded_square.element_centers[17], [0.5, 0.875])
    assert_allclose(bounded_square.element_sizes[17], [0.2, 0.25])


@pytest.mark.parametrize('breakpoints', [
    [0.0, 0.5, 0.4, 1.0, 2.0],
    [0.0, 1.0, 1.0, 2.0, 3.0],
    [0.0, np.nan, 2.0, 3.0, 4.0],
])
def test_rejects_non_monotone_breakpoints(breakpoints) -> None:
    with pytest.raises(NonMonotoneBreakpointsError):
        build_mesh(1, [breakpoints])


def test_rejects_too_few_elements() -> None:
    with pytest.raises(TooFewElementsError):
        build_mesh(1, [[0.0, 0.5, 1.0]])


def test_rejects_unsupported_dimension() -> None:
    with pytest.raises(UnsupportedDimensionError):
        build_mesh(3, [[0, 1, 2, 3]] * 3)


def test_rejects_mismatched_direction_inputs() -> None:
    with pytest.raises(UnsupportedDimensionError):
        build_mesh(2, [[0, 1, 2, 3, 4]])
    with pytest.raises(UnsupportedDimensionError):
        build_mesh(2, [[0, 1, 2, 3, 4]] * 2, periodic_per_direction=(True, ))


def test_three_periodic_elements_warn(caplog: pytest.LogCaptureFixture) -> None:
    with caplog.at_level(logging.WARNING, logger='rdgsolver.mesh'):
        mesh = uniform_mesh(3, 0.0, 1.0, periodic=True)

    assert mesh.n_elements == 3
    assert any('exactly three elements' in record.message for record in caplog.records)


def test_invalid_element() -> None:
    mesh = uniform_mesh(4, 0.0, 1.0)

    with pytest.raises(InvalidElementError):
        mesh.multi_index(4)

    with pytest.raises(InvalidElementError):
        mesh.linear_index((7, ))


@pytest.mark.parametrize('index, members, kind', [
    (0, (0, 1, 2), StencilKind.FORWARD),
    (5, (4, 5, 6), StencilKind.CENTER),
    (11, (9, 10, 11), StencilKind.BACKWARD),
])
def test_one_dimensional_stencils(bounded_line, index, members, kind) -> None:
    assert bounded_line.stencil_1d(0, index) == (members, kind)


def test_periodic_stencils_wrap(periodic_line) -> None:
    assert periodic_line.stencil_1d(0, 0) == ((15, 0, 1), StencilKind.CENTER)
    assert periodic_line.stencil_1d(0, 15) == ((14, 15, 0), StencilKind.CENTER)

    ratios, offsets = periodic_line.stencil_geometry_1d(0, 0)

    assert_allclose(ratios, [1.0, 1.0, 1.0])
    assert_allclose(offsets, [-2.0, 0.0, 2.0])


@pytest.mark.parametrize('index, offsets', [(0, [0.0, 2.0, 4.0]), (5, [-2.0, 0.0, 2.0]), (11, [-4.0, -2.0, 0.0])])
def test_uniform_stencil_offsets(bounded_line, index, offsets) -> None:
    ratios, computed = bounded_line.stencil_geometry_1d(0, index)

    assert_allclose(ratios, 1.0)
    assert_allclose(computed, offsets, atol=1e-14)


def test_nonuniform_stencil_geometry() -> None:
    mesh = build_mesh(1, [[0.0, 1.0, 3.0, 4.0, 8.0]])
    ratios, offsets = mesh.stencil_geometry_1d(0, 1)

    assert_allclose(ratios, [0.5, 1.0, 0.5])
    assert_allclose(offsets, [-1.5, 0.0, 1.5])


def test_tensor_stencil(bounded_square) -> None:
    corner = stencil_of(bounded_square, (0, 0))

    assert corner.kinds == (StencilKind.FORWARD, StencilKind.FORWARD)
    assert corner.members[:4] == ((0, 0), (1, 0), (2, 0), (0, 1))
    assert corner.owner_position == 0

    inner = stencil_of(bounded_square, (2, 2))

    assert inner.kinds == (StencilKind.CENTER, StencilKind.CENTER)
    assert inner.owner_position == 4
    assert len(set(inner.members)) == 9


def test_stencil_table_matches_stencil_of(bounded_square) -> None:
    members, kinds = bounded_square.stencil_table

    for element in range(bounded_square.n_elements):
        stencil = stencil_of(bounded_square, element)

        assert list(members[element]) == [bounded_square.linear_index(m) for m in stencil.members]
        assert tuple(kinds[element]) == tuple(int(k) for k in stencil.kinds)


def test_stencil_positions() -> None:
    assert stencil_positions(1) == ((0, ), (1, ), (2, ))
    assert stencil_positions(2)[:4] == ((0, 0), (1, 0), (2, 0), (0, 1))


def test_graded_breakpoints() -> None:
    bp = graded_breakpoints(-1.0, 2.0, 20, ratio=2.0, seed=7)
    sizes = np.diff(bp)

    assert bp[0] == -1.0
    assert bp[-1] == 2.0
    assert np.all(sizes > 0.0)
    assert sizes.max() / sizes.min() <= 2.0 + 1e-12
    assert_allclose(bp, graded_breakpoints(-1.0, 2.0, 20, ratio=2.0, seed=7))


def test_locate_sides() -> None:
    mesh = uniform_mesh(4, 0.0, 1.0)
    points = np.array([[0.0], [0.1], [0.25], [1.0]])

    assert list(mesh.locate(points, TraceSide.PLUS)) == [0, 0, 1, 3]
    assert list(mesh.locate(points, TraceSide.MINUS)) == [0, 0, 0, 3]

    with pytest.raises(PointOutsideDomainError):
        mesh.locate(np.array([[1.5]]))


def test_reference_maps_round_trip(bounded_square) -> None:
    reference = np.array([[-1.0, -1.0], [0.0, 0.0], [0.5, -0.25]])
    physical = bounded_square.to_physical(reference)

    assert physical.shape == (bounded_square.n_elements, 3, 2)

    elements = np.full(3, 7)
    assert_allclose(bounded_square.to_reference(physical[7], elements), reference, atol=1e-14)
