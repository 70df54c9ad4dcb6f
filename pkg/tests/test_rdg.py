from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rdgsolver import (
    InvalidElementError, OrderPair, PointOutsideDomainError, RdgSpace, RdgValueError, TraceSide, build_space,
    eval_gradient, eval_solution, l2_error, local_poly, mass_matrix, project_initial, read_dump, sample_grid,
    uniform_mesh, write_dump, write_samples
)


def _quadratic(x: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * x[..., 0] + 3.0 * x[..., 0] ** 2


def test_dof_count_law(periodic_space: RdgSpace, periodic_square) -> None:
    order = periodic_space.order

    assert periodic_space.n_dofs == periodic_space.mesh.n_elements * (order.m + 1)
    assert periodic_space.n_dofs * 3 == periodic_space.n_coeffs

    square = build_space(periodic_square, order.k)

    assert square.n_dofs * 9 == square.n_coeffs
    assert square.reconstruction.shape == (square.n_coeffs, square.n_dofs)


def test_dof_numbering(periodic_square) -> None:
    space = build_space(periodic_square, 5)

    assert space.dof_index(3, (1, 0)) == 3 * 4 + 2
    assert space.dof_pair(3 * 4 + 2) == (3, (1, 0))

    with pytest.raises(InvalidElementError):
        space.dof_index(periodic_square.n_elements, (0, 0))


def test_build_space_accepts_order_pair(bounded_line) -> None:
    space = build_space(bounded_line, OrderPair.from_order(2))

    assert space.order.m == 0


def test_projection_reproduces_polynomials(bounded_space: RdgSpace) -> None:
    dofs = project_initial(bounded_space, _quadratic)
    points = np.linspace(-0.99, 0.99, 37)[:, None]

    assert_allclose(eval_solution(bounded_space, dofs, points), _quadratic(points), atol=1e-11)
    assert_allclose(eval_gradient(bounded_space, dofs, points)[:, 0], -2.0 + 6.0 * points[:, 0], atol=1e-9)


def test_local_poly_matches_evaluation(bounded_space: RdgSpace, rng: np.random.Generator) -> None:
    dofs = rng.standard_normal(bounded_space.n_dofs)
    element = 4
    lo, hi = bounded_space.mesh.breakpoints[0][element:element + 2]
    points = np.linspace(lo, hi, 9)[1:-1, None]

    poly = local_poly(bounded_space, dofs, element)

    assert_allclose(poly(bounded_space, points), eval_solution(bounded_space, dofs, points), atol=1e-12)
    assert_allclose(poly.coefficients, bounded_space.local_coefficients(dofs)[element])

    with pytest.raises(InvalidElementError):
        local_poly(bounded_space, dofs, -1)


def test_owner_moments_are_reproduced(bounded_space: RdgSpace, rng: np.random.Generator) -> None:
    dofs = rng.standard_normal(bounded_space.n_dofs)
    coeffs = bounded_space.local_coefficients(dofs)

    assert_allclose(coeffs[:, bounded_space.owner_columns].ravel(), dofs, atol=1e-10)


def test_trace_sides(bounded_space: RdgSpace, rng: np.random.Generator) -> None:
    dofs = rng.standard_normal(bounded_space.n_dofs)
    interface = bounded_space.mesh.breakpoints[0][3]
    coeffs = bounded_space.local_coefficients(dofs)
    signs = (-1.0) ** np.arange(bounded_space.order.k + 1)

    plus = eval_solution(bounded_space, dofs, np.array([[interface]]), TraceSide.PLUS)
    minus = eval_solution(bounded_space, dofs, np.array([[interface]]), TraceSide.MINUS)

    assert plus[0] == pytest.approx(coeffs[3] @ signs)
    assert minus[0] == pytest.approx(coeffs[2].sum())


def test_eval_rejects_outside_points(bounded_space: RdgSpace) -> None:
    with pytest.raises(PointOutsideDomainError):
        eval_solution(bounded_space, np.zeros(bounded_space.n_dofs), np.array([[2.0]]))

    with pytest.raises(RdgValueError):
        eval_solution(bounded_space, np.zeros(3), np.array([[0.0]]))


def test_mass_matrix_is_reduced_gram(periodic_space: RdgSpace, rng: np.random.Generator) -> None:
    mass = mass_matrix(periodic_space)
    dofs = rng.standard_normal(periodic_space.n_dofs)
    coeffs = periodic_space.local_coefficients(dofs).ravel()

    assert abs(mass - mass.T).max() < 1e-14
    assert dofs @ (mass @ dofs) == pytest.approx(np.sum(periodic_space.dg_mass * coeffs ** 2), rel=1e-12)
    assert mass.nnz > periodic_space.n_dofs


@pytest.mark.parametrize('dim', [1, 2])
def test_mass_matrix_is_positive_definite(dim: int, order: int, periodic_line, periodic_square) -> None:
    space = build_space(periodic_line if dim == 1 else periodic_square, order)
    mass = mass_matrix(space).toarray()

    assert_allclose(mass, mass.T, atol=1e-12 * np.abs(mass).max())
    assert np.all(np.diag(np.linalg.cholesky(mass)) > 0.0)


def test_l2_error_of_exact_polynomial(bounded_space: RdgSpace) -> None:
    dofs = project_initial(bounded_space, _quadratic)

    errors = l2_error(
        bounded_space, dofs, _quadratic, gradient=lambda x: (-2.0 + 6.0 * x[..., 0])[..., None]
    )

    assert errors.error_u == pytest.approx(0.0, abs=1e-11)
    assert errors.error_q_total == pytest.approx(0.0, abs=1e-9)


def test_l2_error_of_scaled_auxiliary(bounded_space: RdgSpace) -> None:
    eps = 0.25
    dofs = project_initial(bounded_space, _quadratic)
    q = project_initial(bounded_space, lambda x: np.sqrt(eps) * (-2.0 + 6.0 * x[..., 0]))

    errors = l2_error(
        bounded_space, dofs, _quadratic, gradient=lambda x: (-2.0 + 6.0 * x[..., 0])[..., None],
        q_dofs=[q], eps=eps
    )

    assert errors.error_q is not None
    assert errors.error_q.shape == (1, )
    assert errors.error_q_total == pytest.approx(0.0, abs=1e-10)


def test_dump_round_trip(tmp_path: Path, rng: np.random.Generator) -> None:
    mesh = uniform_mesh((4, 3), (0.0, -1.0), (2.0, 1.0), periodic=(True, False))
    space = build_space(mesh, 2)
    dofs = rng.standard_normal(space.n_dofs)

    path = write_dump(space, dofs, tmp_path / 'nested' / 'dump.csv', problem='2d-test1', t=0.5)
    dump = read_dump(path)

    assert dump.order == space.order
    assert dump.mesh.shape == mesh.shape
    assert dump.mesh.periodic == mesh.periodic
    assert dump.metadata == {'problem': '2d-test1', 't': '0.5'}
    assert_allclose(dump.dofs, dofs, atol=1e-10)
    assert_allclose(dump.coefficients, space.local_coefficients(dofs), rtol=0.0, atol=0.0)

    points = np.array([[0.3, 0.2], [1.7, -0.9], [1.0, 0.5]])

    assert_allclose(dump.evaluate(points), eval_solution(space, dofs, points), atol=1e-12)


def test_read_dump_rejects_foreign_files(tmp_path: Path) -> None:
    path = tmp_path / 'foreign.csv'
    path.write_text('a,b,c\n1,2,3\n', encoding='utf-8')

    with pytest.raises(RdgValueError):
        read_dump(path)


def test_samples(tmp_path: Path, bounded_square) -> None:
    space = build_space(bounded_square, 2)
    dofs = project_initial(space, lambda x: x[..., 0] + x[..., 1])

    points, values = sample_grid(space, dofs, per_element=2)

    assert points.shape == (bounded_square.n_elements * 4, 2)
    assert_allclose(values, points.sum(axis=-1), atol=1e-12)

    path = write_samples(tmp_path / 'samples.csv', points, values)
    lines = path.read_text(encoding='utf-8').splitlines()

    assert lines[0] == 'x,y,value'
    assert len(lines) == len(values) + 1
