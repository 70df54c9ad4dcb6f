from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rdgsolver import (
    OrderPair, SingularMatrixError, StencilKind, UnsupportedOrderError, build_mesh, build_tables, default_rule,
    determinant_lower_bound, determinant_lower_bound_1d, determinant_oracle, determinant_oracle_1d, element_moments,
    graded_breakpoints, legendre_eval, moment_matrix, observed_rates, reconstruction_error_study,
    reconstruction_map, stencil_geometry, stencil_positions, uniform_mesh, wellposedness_check
)

UNIFORM_K5 = 5_225_472


def test_order_pairs() -> None:
    assert OrderPair.from_order(2) == OrderPair(2, 0, 1)
    assert OrderPair.from_order(5, 2) == OrderPair(5, 1, 2)
    assert OrderPair.from_order(5, 2).n_rows == OrderPair.from_order(5, 2).n_coeffs == 36

    with pytest.raises(UnsupportedOrderError):
        OrderPair.from_order(3)

    with pytest.raises(UnsupportedOrderError):
        OrderPair(2, 1)


@pytest.mark.parametrize('element, expected', [
    (0, [[1.0, 0.0, 0.0], [1.0, 2.0, 6.0], [1.0, 4.0, 24.0]]),
    (3, [[1.0, -2.0, 6.0], [1.0, 0.0, 0.0], [1.0, 2.0, 6.0]]),
    (7, [[1.0, -4.0, 24.0], [1.0, -2.0, 6.0], [1.0, 0.0, 0.0]]),
])
def test_uniform_k2_moment_matrices(element: int, expected: list[list[float]]) -> None:
    mesh = uniform_mesh(8, 0.0, 1.0)
    matrix = moment_matrix(mesh, element, OrderPair.from_order(2))

    assert_allclose(matrix, expected, atol=1e-12)
    assert abs(np.linalg.det(matrix)) == pytest.approx(24.0)


@pytest.mark.parametrize('element', [0, 3, 7])
def test_uniform_k5_determinant(element: int) -> None:
    mesh = uniform_mesh(8, 0.0, 1.0)
    table = reconstruction_map(mesh, element, OrderPair.from_order(5))

    assert abs(table.determinant) == pytest.approx(UNIFORM_K5, rel=1e-9)


def test_closed_forms_at_unit_ratios() -> None:
    ones = np.ones(3)

    for kind in StencilKind:
        assert determinant_oracle_1d(kind, ones, 2) == pytest.approx(24.0)
        assert determinant_oracle_1d(kind, ones, 5) == pytest.approx(UNIFORM_K5)
        assert determinant_lower_bound_1d(kind, 1.0, 2) == pytest.approx(24.0)
        assert determinant_lower_bound_1d(kind, 1.0, 5) == pytest.approx(UNIFORM_K5)


def test_closed_forms_at_mixed_ratios() -> None:
    assert determinant_oracle_1d(StencilKind.CENTER, np.array([1.0, 1.0, 2.0]), 5) == pytest.approx(167_215_104)
    assert determinant_oracle_1d(StencilKind.FORWARD, np.array([1.0, 1.0, 2.0]), 5) == pytest.approx(167_215_104)
    assert determinant_oracle_1d(StencilKind.CENTER, np.array([2.0, 1.0, 2.0]), 5) == pytest.approx(4_133_430_000)
    assert determinant_oracle_1d(StencilKind.CENTER, np.array([1.0, 1.0, 2.0]), 2) == pytest.approx(48.0)


@pytest.mark.parametrize('k', [2, 5])
def test_oracle_matches_on_graded_meshes(k: int) -> None:
    order = OrderPair.from_order(k)

    for seed in range(4):
        mesh = build_mesh(1, [graded_breakpoints(0.0, 1.0, 9, 2.0, seed)])

        for element in range(mesh.n_elements):
            geometry = stencil_geometry(mesh, element)
            report = wellposedness_check(moment_matrix(mesh, element, order), geometry, order, a_min=0.5)

            assert report.oracle_match, (seed, element, report)
            assert report.above_lower_bound, (seed, element, report)


@pytest.mark.parametrize('k', [2, 5])
def test_two_dimensional_determinant_is_kronecker_power(k: int) -> None:
    mesh = build_mesh(
        2, [graded_breakpoints(0.0, 1.0, 5, 2.0, 11), graded_breakpoints(0.0, 2.0, 4, 2.0, 12)], False
    )
    order = OrderPair.from_order(k, 2)

    for element in range(mesh.n_elements):
        geometry = stencil_geometry(mesh, element)
        report = wellposedness_check(moment_matrix(mesh, element, order), geometry, order)

        assert report.deviation == pytest.approx(0.0, abs=1e-9)

    uniform = uniform_mesh((4, 4), (0.0, 0.0), (1.0, 1.0))
    geometry = stencil_geometry(uniform, (1, 0))
    expected = (24.0 if k == 2 else float(UNIFORM_K5)) ** (2 * (k + 1))

    assert determinant_oracle(geometry, order) == pytest.approx(expected, rel=1e-12)
    assert determinant_lower_bound(geometry, order, 1.0) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize('k', [2, 5])
def test_two_dimensional_matrix_is_kronecker_product(k: int) -> None:
    bx, by = graded_breakpoints(0.0, 1.0, 5, 2.0, 21), graded_breakpoints(-1.0, 1.0, 6, 2.0, 22)
    square = build_mesh(2, [bx, by], False)
    lines = build_mesh(1, [bx], False), build_mesh(1, [by], False)
    order, line_order = OrderPair.from_order(k, 2), OrderPair.from_order(k)
    width = line_order.m + 1

    for element in [(0, 0), (2, 3), (4, 1), (1, 5)]:
        mx, my = (moment_matrix(line, (i, ), line_order) for line, i in zip(lines, element))
        expected = np.array([
            [mx[s1 * width + b1, a1] * my[s2 * width + b2, a2] for a1, a2 in order.poly_indices]
            for s1, s2 in stencil_positions(2) for b1, b2 in order.moment_indices
        ])

        assert_allclose(moment_matrix(square, element, order), expected, rtol=1e-13, atol=0.0)


def test_wellposedness_rejects_singular() -> None:
    with pytest.raises(SingularMatrixError):
        wellposedness_check(np.array([[1.0, 1.0], [1.0, 1.0]]))

    with pytest.raises(SingularMatrixError):
        wellposedness_check(np.diag([1.0, 1e-14]), limit=1e12)


def test_reconstruction_of_linear_averages() -> None:
    mesh = uniform_mesh(3, 0.0, 3.0)
    tables = build_tables(mesh, OrderPair.from_order(2))

    coeffs = tables.local_coefficients(np.array([-1.0, 0.0, 1.0]))

    assert_allclose(coeffs[1], [0.0, 0.5, 0.0], atol=1e-14)


def _owner_polynomial(mesh, owner: int, order: OrderPair, coeffs: np.ndarray):
    center = mesh.element_centers[owner]
    half = 0.5 * mesh.element_sizes[owner]

    def p(x: np.ndarray) -> np.ndarray:
        xi = (np.asarray(x) - center) / half
        out = np.zeros(xi.shape[:-1])

        for c, alpha in zip(coeffs, order.poly_indices):
            term = np.full(xi.shape[:-1], c)
            for i, a in enumerate(alpha):
                term = term * legendre_eval(a, xi[..., i])
            out += term

        return out

    return p


@pytest.mark.parametrize('k, dim', [(2, 1), (5, 1), (2, 2), (5, 2)])
def test_k_exactness(rng: np.random.Generator, k: int, dim: int) -> None:
    order = OrderPair.from_order(k, dim)
    cells = 7 if dim == 1 else 4
    mesh = build_mesh(
        dim, [graded_breakpoints(0.0, 1.0, cells, 2.0, seed) for seed in range(dim)], False
    )
    tables = build_tables(mesh, order)

    for owner in range(mesh.n_elements):
        coeffs = rng.standard_normal(order.n_coeffs)
        p = _owner_polynomial(mesh, owner, order, coeffs)

        dofs = element_moments(mesh, order.moment_indices, p, default_rule(k))
        reconstructed = tables.local_coefficients(dofs.ravel())[owner]

        assert_allclose(reconstructed, coeffs, atol=1e-9)


@pytest.mark.parametrize('k, dim', [(2, 1), (5, 1), (2, 2), (5, 2)])
def test_k_exactness_on_random_stencils(rng: np.random.Generator, k: int, dim: int) -> None:
    order = OrderPair.from_order(k, dim)
    cells = 8 if dim == 1 else 5
    worst = 0.0

    for seed in range(3):
        mesh = build_mesh(
            dim, [graded_breakpoints(0.0, 1.0, cells, 2.0, 10 * seed + j) for j in range(dim)], False
        )

        for table in build_tables(mesh, order).tables:
            coeffs = rng.uniform(-1.0, 1.0, (order.n_coeffs, 1000))
            error = np.abs(table.reconstruct(table.matrix @ coeffs) - coeffs).max(axis=0)

            worst = max(worst, float((error / np.abs(coeffs).max(axis=0)).max()))

    assert worst <= 1e-11


def test_tables_are_shared_by_geometry() -> None:
    periodic = build_tables(uniform_mesh(10, 0.0, 1.0, periodic=True), OrderPair.from_order(5))
    bounded = build_tables(uniform_mesh(10, 0.0, 1.0), OrderPair.from_order(5))

    assert len(periodic.tables) == 1
    assert len(bounded.tables) == 3
    assert len(bounded) == 10
    assert bounded[0].kinds == (StencilKind.FORWARD, )
    assert max(table.identity_residual for table in bounded.tables) < 1e-10


def test_build_tables_threads_agree(rng: np.random.Generator) -> None:
    mesh = build_mesh(1, [graded_breakpoints(0.0, 1.0, 12, 2.0, 5)])
    order = OrderPair.from_order(5)
    dofs = rng.standard_normal(mesh.n_elements * order.n_moments)

    serial = build_tables(mesh, order, threads=1).local_coefficients(dofs)
    parallel = build_tables(mesh, order, threads=4).local_coefficients(dofs)

    assert_allclose(serial, parallel, rtol=0.0, atol=0.0)


def test_operator_matches_local_coefficients(rng: np.random.Generator) -> None:
    mesh = uniform_mesh((4, 5), (0.0, 0.0), (1.0, 1.0), periodic=(True, False))
    order = OrderPair.from_order(2, 2)
    tables = build_tables(mesh, order)
    dofs = rng.standard_normal(mesh.n_elements * order.n_moments)

    assert tables.operator.shape == (mesh.n_elements * order.n_coeffs, mesh.n_elements * order.n_moments)
    assert_allclose(tables.operator @ dofs, tables.local_coefficients(dofs).ravel(), atol=1e-12)


def test_build_tables_rejects_dimension_mismatch() -> None:
    with pytest.raises(UnsupportedOrderError):
        build_tables(uniform_mesh(5, 0.0, 1.0), OrderPair.from_order(2, 2))


def test_observed_rates() -> None:
    rates = observed_rates([0.1, 0.05, 0.025], [1e-3, 1.25e-4, 0.0])

    assert rates[0] is None
    assert rates[1] == pytest.approx(3.0)
    assert np.isnan(rates[2])


@pytest.mark.parametrize('k, cells', [(2, (32, 64)), (5, (16, 32))])
def test_reconstruction_approximation_order(k: int, cells: tuple[int, int]) -> None:
    meshes = [uniform_mesh(n, 0.0, 2.0 * np.pi, periodic=True) for n in cells]

    records = reconstruction_error_study(
        lambda x: np.sin(x[..., 0]), meshes, OrderPair.from_order(k),
        gradient=lambda x: np.cos(x[..., 0])[..., None]
    )

    assert records[-1].rate_l2 == pytest.approx(k + 1, abs=0.25)
    assert records[-1].rate_h1 == pytest.approx(k, abs=0.25)
