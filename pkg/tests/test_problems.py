from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from rdgsolver import (
    BoundaryKind, ConfigError, RdgValueError, UnknownProblemError, case_errors, catalog, get_problem,
    manufactured_residual, observed_rates, overshoot, reference_path, reference_solution, rotating_bodies, run_case,
    sample_grid, self_check
)

NAMES = [
    '1d-test1', '1d-test2', '1d-test3', '1d-test4', '2d-test1', '2d-test2', '2d-test3', '2d-test4', '2d-test5'
]
EXACT = [name for name in NAMES if name not in ('1d-test4', '2d-test5')]


def test_catalog_names() -> None:
    assert [case.slug for case in catalog()] == NAMES
    assert [case.name for case in catalog()][:2] == ['1D-Test1', '1D-Test2']
    assert [case.slug for case in catalog() if case.surrogate] == ['1d-test4', '2d-test5']


def test_get_problem_normalizes_names() -> None:
    case = get_problem('1d-test1')

    assert get_problem('1D_Test1') is case
    assert get_problem(' 1d test1 ') is case

    with pytest.raises(UnknownProblemError):
        get_problem('3d-test1')


@pytest.mark.parametrize('name', EXACT)
def test_exact_solutions_solve_their_problems(name: str) -> None:
    assert self_check(get_problem(name)) <= 1e-8


def test_manufactured_residual_detects_wrong_data() -> None:
    case = get_problem('1d-test1')
    points = np.array([[0.5], [1.5], [4.0]])

    assert np.abs(manufactured_residual(case, points, 0.3)).max() < 1e-8

    broken = replace(case, problem=replace(case.problem, eps=2.0))

    assert np.abs(manufactured_residual(broken, points, 0.3)).max() > 0.1

    with pytest.raises(RdgValueError):
        manufactured_residual(get_problem('2d-test5'), np.zeros((1, 2)), 0.0)


def test_case_meshes() -> None:
    square = get_problem('2d-test1').mesh(4)

    assert square.shape == (4, 4)
    assert square.periodic == (True, True)
    assert square.h_max == pytest.approx(0.5 * np.pi)

    graded = get_problem('2d-test4').mesh((4, 6), ratio=2.0, seed=1)

    assert graded.shape == (4, 6)
    assert graded.periodic == (False, False)
    assert all(np.diff(bp).max() / np.diff(bp).min() <= 2.0 + 1e-12 for bp in graded.breakpoints)

    with pytest.raises(ConfigError):
        get_problem('2d-test1').mesh((4, 5, 6))


def test_with_boundary() -> None:
    case = get_problem('1d-test1')
    dirichlet = case.with_boundary(['dirichlet'])

    assert dirichlet.problem.boundary[0].kind is BoundaryKind.DIRICHLET
    assert dirichlet.problem.boundary[0].data is case.exact
    assert dirichlet.mesh(8).periodic == (False, )
    assert case.problem.periodic == (True, )

    mixed = get_problem('2d-test1').with_boundary([BoundaryKind.PERIODIC, 'Dirichlet'])

    assert mixed.problem.periodic == (True, False)

    step = get_problem('1d-test4')

    assert step.with_boundary(['dirichlet']).problem.boundary == step.problem.boundary

    with pytest.raises(ConfigError):
        step.with_boundary(['periodic']).with_boundary(['dirichlet'])

    with pytest.raises(ConfigError):
        get_problem('2d-test1').with_boundary(['periodic', 'periodic', 'periodic'])

    with pytest.raises(KeyError):
        case.with_boundary(['neumann'])


def test_rotating_bodies() -> None:
    def at(xi: float, eta: float) -> float:
        point = np.array([[4.0 * np.pi * xi - 2.0 * np.pi, 4.0 * np.pi * eta - 2.0 * np.pi]])
        return float(rotating_bodies(point)[0])

    assert at(0.5, 0.25) == pytest.approx(1.0)
    assert at(0.5 + 0.075, 0.25) == pytest.approx(0.5)
    assert at(0.25, 0.5) == pytest.approx(0.5)
    assert at(0.6, 0.75) == 1.0
    assert at(0.5, 0.7) == 0.0
    assert at(0.5, 0.88) == 1.0
    assert at(0.9, 0.1) == 0.0


def test_overshoot() -> None:
    assert overshoot(np.array([0.0, 0.5, 1.2]), 1.0, 0.0) == pytest.approx((0.2, 0.0))
    assert overshoot(np.array([-0.3, 0.5]), 1.0, 0.0) == pytest.approx((0.0, 0.3))
    assert overshoot(np.array([]), 1.0, 0.0) == (0.0, 0.0)


def test_short_run_is_accurate() -> None:
    run = run_case(get_problem('1d-test1'), 2, 32, t_final=0.1)

    assert run.t == 0.1
    assert run.steps == 1
    assert len(run.q) == 1

    errors = case_errors(run)

    assert errors is not None
    assert errors.error_u < 5e-3
    assert errors.error_q_total < 0.1


def test_surrogate_reference_is_cached(tmp_path: Path, caplog: pytest.LogCaptureFixture) -> None:
    case = get_problem('1d-test4')
    path = reference_path(tmp_path, case, 2, 16, 0.02)

    assert path.name == '1d-test4_k2_n16_t0.02.csv'

    reference = reference_solution(case, 2, 16, tmp_path, 0.02)

    assert path.exists()
    assert reference.mesh.n_elements == 16
    assert float(reference.metadata['t']) == pytest.approx(0.02)

    with caplog.at_level('INFO', logger='rdgsolver.problems'):
        again = reference_solution(case, 2, 16, tmp_path, 0.02)

    assert any('cached reference' in record.getMessage() for record in caplog.records)
    np.testing.assert_allclose(again.dofs, reference.dofs)

    run = run_case(case, 2, 4, t_final=0.02)

    assert case_errors(run) is None

    errors = case_errors(run, reference)

    assert errors is not None
    assert np.isfinite(errors.error_u)
    assert errors.error_q is None


def test_step_follows_order() -> None:
    case = get_problem('1d-test1')
    h = 2.0 * np.pi / 16

    assert case.step_exponent_for(2) == 1.0
    assert case.step_exponent_for(5) == 2.0
    assert get_problem('1d-test4').step_exponent_for(5) == 1.0

    assert run_case(case, 5, 16, t_final=0.01).dt == pytest.approx(case.cfl * h ** 2)
    assert run_case(case, 5, 16, t_final=0.01, step_exponent=1.0).dt == pytest.approx(case.cfl * h)


def test_step_data_matches_initial_step() -> None:
    case = get_problem('1d-test4')
    (bc, ) = case.problem.boundary
    ends = np.array([[0.0], [1.0]])

    np.testing.assert_array_equal(bc.data(ends, 0.5), case.initial(ends))  # type: ignore[misc]
    np.testing.assert_array_equal(case.initial(np.array([[0.3], [0.31]])), [1.0, -0.1])


def _rates(name: str, k: int, cells: tuple[int, ...]) -> tuple[list[float], list[float | None]]:
    case = get_problem(name)
    errors = [case_errors(run_case(case, k, n)) for n in cells]
    h = [1.0 / n for n in cells]

    rates_u = observed_rates(h, [e.error_u for e in errors])  # type: ignore[union-attr]
    rates_q = observed_rates(h, [e.error_q_total for e in errors])  # type: ignore[union-attr,misc]

    return rates_u, rates_q


@pytest.mark.slow
@pytest.mark.parametrize('name, k, cells, tolerance', [
    ('1d-test1', 2, (128, 256, 512), 0.15),
    ('1d-test2', 2, (128, 256, 512), 0.15),
    ('1d-test1', 5, (16, 32, 64, 128), 0.3),
    ('1d-test2', 5, (16, 32, 64, 128), 0.3),
])
def test_one_dimensional_rates(name: str, k: int, cells: tuple[int, ...], tolerance: float) -> None:
    rates_u, rates_q = _rates(name, k, cells)

    assert rates_u[-1] == pytest.approx(k + 1, abs=tolerance)
    assert rates_q[-1] == pytest.approx(k + 1, abs=tolerance)


@pytest.mark.slow
@pytest.mark.parametrize('name', ['2d-test1', '2d-test3'])
def test_two_dimensional_rates(name: str) -> None:
    rates_u, _ = _rates(name, 2, (20, 30, 40))

    assert rates_u[1:] == pytest.approx([3.0, 3.0], abs=0.2)


@pytest.mark.slow
def test_two_dimensional_high_order() -> None:
    rates_u, _ = _rates('2d-test1', 5, (10, 20))

    assert rates_u[-1] >= 5.5  # type: ignore[operator]


@pytest.mark.slow
def test_front_converges_monotonically() -> None:
    case = get_problem('1d-test3')
    cells = (32, 64, 128)
    errors = [case_errors(run_case(case, 2, n)).error_u for n in cells]  # type: ignore[union-attr]

    assert errors[0] > errors[1] > errors[2]
    assert observed_rates([1.0 / n for n in cells], errors)[-1] >= 2.0


@pytest.mark.slow
@pytest.mark.parametrize('k', [2, 5])
def test_burgers_step_oscillations_shrink(k: int) -> None:
    case = get_problem('1d-test4')
    lower, upper = case.admissible  # type: ignore[misc]
    excursions = []

    for n in (32, 512):
        run = run_case(case, k, n)
        _, values = sample_grid(run.space, run.dofs, 8)

        assert np.all(np.isfinite(run.dofs))
        excursions.append(overshoot(values, upper, lower))

    coarse, fine = excursions

    assert fine.overshoot < coarse.overshoot or coarse.overshoot == 0.0
    assert fine.undershoot < coarse.undershoot or coarse.undershoot == 0.0


@pytest.mark.slow
def test_boundary_layer_stays_finite() -> None:
    run = run_case(get_problem('2d-test4'), 2, 50)
    errors = case_errors(run)

    assert np.all(np.isfinite(run.dofs))
    assert errors is not None
    assert np.isfinite(errors.error_u)
