from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace
from functools import cache
from os import PathLike
from pathlib import Path
from typing import Any, Callable, NamedTuple, Sequence

import numpy as np

from .exceptions import ConfigError, RdgValueError, UnknownProblemError
from .ldg import PdeProblem, SemiDiscreteSystem
from .mesh import TensorMesh, build_mesh, graded_breakpoints, uniform_mesh
from .rdg import L2Errors, RdgSpace, SolutionDump, build_space, l2_error, project_initial, read_dump, write_dump
from .timestepping import StepRecord, advance, cfl_step
from .types import BoundaryKind, ConvectiveFlux, FloatArray, SolverMethod, SpaceFunction, SpaceTimeFunction

__all__ = [
    'TestCase',

    'catalog', 'get_problem',

    'manufactured_residual', 'self_check',

    'rotating_bodies',

    'Overshoot', 'overshoot',

    'CaseRun', 'run_case', 'case_errors',

    'REFERENCE_FACTOR', 'reference_path', 'reference_solution'
]

logger = logging.getLogger(__name__)

VectorFunction = Callable[[FloatArray, float], FloatArray]

REFERENCE_FACTOR = 4
"""Surrogate references are computed on meshes this many times finer than the finest study mesh."""

SELF_CHECK_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class TestCase:
    """
    A named initial-boundary value problem with its default run settings.

    Cases without an exact solution are measured against a fine-mesh surrogate reference.
    """

    __test__ = False

    name: str
    problem: PdeProblem
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    initial: SpaceFunction
    exact: SpaceTimeFunction | None = None
    gradient: VectorFunction | None = None
    t_final: float = 1.0
    cfl: float = 1.0
    cells: tuple[int, ...] = (16, 32, 64, 128, 256, 512)
    length_scale: float = 1.0
    admissible: tuple[float, float] | None = None
    step_exponent: float | None = None

    @property
    def dim(self) -> int:
        return self.problem.dim

    @property
    def slug(self) -> str:
        return self.name.lower()

    @property
    def surrogate(self) -> bool:
        return self.exact is None

    def step_exponent_for(self, k: int) -> float:
        """Exponent of ``h_min`` in the time step; ``(k + 1) / 3`` unless the case fixes it."""
        return (k + 1) / 3 if self.step_exponent is None else self.step_exponent

    def mesh(self, cells: int | Sequence[int], ratio: float | None = None, seed: int | None = 0) -> TensorMesh:
        """
        Mesh of the case domain.

        :param cells:       Elements per direction, one value for all directions or one per direction.
        :param ratio:       Random element sizes in ``[1, ratio]`` times a base size, uniform when None.
        :param seed:        Seed of the random sizes; direction ``i`` uses ``seed + i``.
        """

        cells_ = _per_direction(cells, self.dim)

        if ratio is None:
            return uniform_mesh(cells_, self.lower, self.upper, self.problem.periodic, self.dim)

        return build_mesh(
            self.dim, [
                graded_breakpoints(lo, hi, n, ratio, None if seed is None else seed + i)
                for i, (n, lo, hi) in enumerate(zip(cells_, self.lower, self.upper))
            ],
            self.problem.periodic
        )

    def with_boundary(self, kinds: Sequence[BoundaryKind | str]) -> TestCase:
        """
        Same case with the boundary kind of every direction replaced.

        Dirichlet data is kept when the direction already was Dirichlet, otherwise it is taken from the exact solution.

        :raises ConfigError:    Dirichlet data is needed but there is no exact solution.
        """

        if len(kinds) == 1:
            kinds = list(kinds) * self.dim

        if len(kinds) != self.dim:
            raise ConfigError('Need one boundary kind per direction!', self.with_boundary, list(kinds))

        boundary = []

        for direction, kind in enumerate(kinds):
            kind = kind if isinstance(kind, BoundaryKind) else BoundaryKind[str(kind).upper()]
            current = self.problem.boundary[direction]

            if kind is BoundaryKind.PERIODIC:
                boundary.append(BoundaryKind.PERIODIC())
            elif current.kind is BoundaryKind.DIRICHLET:
                boundary.append(current)
            elif self.exact is not None:
                boundary.append(BoundaryKind.DIRICHLET(self.exact))
            else:
                raise ConfigError(
                    'Dirichlet data needs an exact solution!', self.with_boundary, f'{self.name}, direction {direction}'
                )

        return replace(self, problem=replace(self.problem, boundary=tuple(boundary)))


def _per_direction(cells: int | Sequence[int], dim: int) -> tuple[int, ...]:
    out = (int(cells), ) * dim if isinstance(cells, (int, np.integer)) else tuple(int(n) for n in cells)

    if len(out) == 1:
        out *= dim

    if len(out) != dim:
        raise ConfigError('Need one cell count per direction!', _per_direction, out)

    return out


def _x(points: FloatArray) -> FloatArray:
    return np.asarray(points, dtype=np.float64)[..., 0]


def _y(points: FloatArray) -> FloatArray:
    return np.asarray(points, dtype=np.float64)[..., 1]


def _unit_velocity(points: FloatArray) -> FloatArray:
    return np.ones_like(np.asarray(points, dtype=np.float64))


def _rotation_velocity(points: FloatArray) -> FloatArray:
    return np.stack([-_y(points), _x(points)], axis=-1)


def _stack(*components: FloatArray) -> FloatArray:
    return np.stack(np.broadcast_arrays(*components), axis=-1)


# sin(x - t)

def _wave_1d(x: FloatArray, t: float) -> FloatArray:
    return np.sin(_x(x) - t)


def _wave_1d_gradient(x: FloatArray, t: float) -> FloatArray:
    return _stack(np.cos(_x(x) - t))


def _test1_1d_source(x: FloatArray, t: float) -> FloatArray:
    return np.sin(_x(x) - t)


def _test2_1d_source(x: FloatArray, t: float) -> FloatArray:
    s, c = np.sin(_x(x) - t), np.cos(_x(x) - t)
    return -c + s * c + s


# travelling front of u_t - nu^2 u_xx + u^3 - u = 0

_FRONT_NU = 0.1
_FRONT_SPEED = 3.0 * _FRONT_NU / np.sqrt(2.0)
_FRONT_WIDTH = 2.0 * np.sqrt(2.0) * _FRONT_NU


def _front(x: FloatArray, t: float) -> FloatArray:
    return 0.5 * (1.0 - np.tanh((_x(x) - _FRONT_SPEED * t) / _FRONT_WIDTH))


def _front_gradient(x: FloatArray, t: float) -> FloatArray:
    z = (_x(x) - _FRONT_SPEED * t) / _FRONT_WIDTH
    return _stack(-0.5 / (_FRONT_WIDTH * np.cosh(z) ** 2))


def _cubic_reaction(x: FloatArray, u: FloatArray) -> FloatArray:
    return u ** 3 - u


# viscous Burgers step

_STEP_POSITION = 0.3


def _burgers_step(x: FloatArray) -> FloatArray:
    return np.where(_x(x) <= _STEP_POSITION, 1.0, -0.1)


def _burgers_step_boundary(x: FloatArray, t: float) -> FloatArray:
    return _burgers_step(x)


def _cosine_reaction(x: FloatArray, u: FloatArray) -> FloatArray:
    return np.pi * np.cos(np.pi * _x(x)) * u


# sin(x + y - 2t)

def _wave_2d(x: FloatArray, t: float) -> FloatArray:
    return np.sin(_x(x) + _y(x) - 2.0 * t)


def _wave_2d_gradient(x: FloatArray, t: float) -> FloatArray:
    c = np.cos(_x(x) + _y(x) - 2.0 * t)
    return _stack(c, c)


def _test1_2d_source(x: FloatArray, t: float) -> FloatArray:
    return 2.0 * np.sin(_x(x) + _y(x) - 2.0 * t)


def _test2_2d_source(x: FloatArray, t: float) -> FloatArray:
    s, c = np.sin(_x(x) + _y(x) - 2.0 * t), np.cos(_x(x) + _y(x) - 2.0 * t)
    return -2.0 * c + 2.0 * s * c + 2.0 * s


# Allen-Cahn

_ALLEN_CAHN_NU = 0.3


def _decay_2d(x: FloatArray, t: float) -> FloatArray:
    return np.exp(-2.0 * t) * np.sin(_x(x) + _y(x))


def _decay_2d_gradient(x: FloatArray, t: float) -> FloatArray:
    c = np.exp(-2.0 * t) * np.cos(_x(x) + _y(x))
    return _stack(c, c)


def _allen_cahn_reaction(x: FloatArray, u: FloatArray) -> FloatArray:
    return (u ** 3 - u) / _ALLEN_CAHN_NU ** 2


def _allen_cahn_source(x: FloatArray, t: float) -> FloatArray:
    return _allen_cahn_reaction(x, _decay_2d(x, t))


# viscous Burgers with boundary layers along x = 1 and y = 1

_LAYER_NU = 1e-2


def _layer_profile(s: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
    """``s tanh((1 - s) / nu)`` and its first two derivatives."""

    th = np.tanh((1.0 - s) / _LAYER_NU)
    sech2 = 1.0 - th ** 2

    value = s * th
    first = th - s * sech2 / _LAYER_NU
    second = -2.0 * sech2 / _LAYER_NU - 2.0 * s * sech2 * th / _LAYER_NU ** 2

    return value, first, second


def _layer_2d(x: FloatArray, t: float) -> FloatArray:
    return np.expm1(t) * _layer_profile(_x(x))[0] * _layer_profile(_y(x))[0]


def _layer_2d_gradient(x: FloatArray, t: float) -> FloatArray:
    (px, dpx, _), (py, dpy, _) = _layer_profile(_x(x)), _layer_profile(_y(x))
    return np.expm1(t) * _stack(dpx * py, px * dpy)


def _layer_2d_source(x: FloatArray, t: float) -> FloatArray:
    (px, dpx, ddpx), (py, dpy, ddpy) = _layer_profile(_x(x)), _layer_profile(_y(x))
    a = np.expm1(t)
    u = a * px * py

    return np.exp(t) * px * py + u * a * (dpx * py + px * dpy) - _LAYER_NU * a * (ddpx * py + px * ddpy)


def _zero(x: FloatArray, t: float) -> FloatArray:
    return np.zeros(np.shape(x)[:-1])


def _zero_initial(x: FloatArray) -> FloatArray:
    return np.zeros(np.shape(x)[:-1])


def _sin_initial(x: FloatArray) -> FloatArray:
    return np.sin(_x(x))


def rotating_bodies(points: FloatArray) -> FloatArray:
    """
    Slotted disk, cone and smooth hump of the classical solid body rotation test, mapped onto [-2pi, 2pi]^2.

    On the unit square the bodies have radius 0.15 and are centred at (0.5, 0.75), (0.5, 0.25) and (0.25, 0.5);
    the slot is 0.05 wide and reaches up to y = 0.85.
    """

    xi = (_x(points) + 2.0 * np.pi) / (4.0 * np.pi)
    eta = (_y(points) + 2.0 * np.pi) / (4.0 * np.pi)
    radius = 0.15

    out = np.zeros(np.broadcast_shapes(xi.shape, eta.shape))

    disk = np.hypot(xi - 0.5, eta - 0.75) / radius
    slot = (np.abs(xi - 0.5) < 0.025) & (eta < 0.85)
    out = np.where((disk <= 1.0) & ~slot, 1.0, out)

    cone = np.hypot(xi - 0.5, eta - 0.25) / radius
    out = np.where(cone <= 1.0, 1.0 - cone, out)

    hump = np.hypot(xi - 0.25, eta - 0.5) / radius
    out = np.where(hump <= 1.0, 0.25 * (1.0 + np.cos(np.pi * hump)), out)

    return out


@cache
def _catalog() -> tuple[TestCase, ...]:
    periodic, dirichlet = BoundaryKind.PERIODIC, BoundaryKind.DIRICHLET
    two_pi = 2.0 * np.pi
    family_2d = (20, 30, 40, 50, 60, 70)
    family_layer = (50, 100, 150)

    cases = (
        TestCase(
            '1D-Test1',
            PdeProblem(1, (periodic(), ), 1.0, _unit_velocity, ConvectiveFlux.LINEAR, source=_test1_1d_source),
            (0.0, ), (two_pi, ), _sin_initial, _wave_1d, _wave_1d_gradient
        ),
        TestCase(
            '1D-Test2',
            PdeProblem(1, (periodic(), ), 1.0, _unit_velocity, ConvectiveFlux.BURGERS, source=_test2_1d_source),
            (-np.pi, ), (np.pi, ), _sin_initial, _wave_1d, _wave_1d_gradient
        ),
        TestCase(
            '1D-Test3',
            PdeProblem(1, (dirichlet(_front), ), _FRONT_NU ** 2, reaction=_cubic_reaction),
            (-1.0, ), (1.0, ), lambda x: _front(x, 0.0), _front, _front_gradient,
            cells=(32, 64, 128), length_scale=_FRONT_NU
        ),
        TestCase(
            '1D-Test4',
            PdeProblem(
                1, (dirichlet(_burgers_step_boundary), ), 1e-3, _unit_velocity, ConvectiveFlux.BURGERS,
                reaction=_cosine_reaction
            ),
            (0.0, ), (1.0, ), _burgers_step, cfl=0.5, cells=(32, 128, 512), length_scale=1e-3, admissible=(-0.1, 1.0),
            step_exponent=1.0
        ),
        TestCase(
            '2D-Test1',
            PdeProblem(2, (periodic(), ) * 2, 1.0, _unit_velocity, ConvectiveFlux.LINEAR, source=_test1_2d_source),
            (0.0, 0.0), (two_pi, two_pi), lambda x: _wave_2d(x, 0.0), _wave_2d, _wave_2d_gradient,
            cfl=0.5, cells=family_2d
        ),
        TestCase(
            '2D-Test2',
            PdeProblem(2, (periodic(), ) * 2, 1.0, _unit_velocity, ConvectiveFlux.BURGERS, source=_test2_2d_source),
            (0.0, 0.0), (two_pi, two_pi), lambda x: _wave_2d(x, 0.0), _wave_2d, _wave_2d_gradient,
            cfl=0.5, cells=family_2d
        ),
        TestCase(
            '2D-Test3',
            PdeProblem(2, (periodic(), ) * 2, 1.0, reaction=_allen_cahn_reaction, source=_allen_cahn_source),
            (0.0, 0.0), (two_pi, two_pi), lambda x: _decay_2d(x, 0.0), _decay_2d, _decay_2d_gradient,
            cfl=0.2, cells=family_2d
        ),
        TestCase(
            '2D-Test4',
            PdeProblem(
                2, (dirichlet(_zero), ) * 2, _LAYER_NU, _unit_velocity, ConvectiveFlux.BURGERS,
                source=_layer_2d_source
            ),
            (0.0, 0.0), (1.0, 1.0), _zero_initial, _layer_2d, _layer_2d_gradient,
            cfl=0.1, cells=family_layer, length_scale=_LAYER_NU, step_exponent=1.0
        ),
        TestCase(
            '2D-Test5',
            PdeProblem(2, (dirichlet(_zero), ) * 2, 1e-3, _rotation_velocity, ConvectiveFlux.LINEAR),
            (-two_pi, -two_pi), (two_pi, two_pi), rotating_bodies,
            cfl=0.05, cells=family_layer, length_scale=1e-3, admissible=(0.0, 1.0),
            step_exponent=1.0
        ),
    )

    for case in cases:
        if case.exact is None:
            continue

        worst = self_check(case)

        if worst > SELF_CHECK_TOL:
            logger.warning('%s: manufactured residual %.3e exceeds %.0e', case.name, worst, SELF_CHECK_TOL)
        else:
            logger.debug('%s: manufactured residual %.3e', case.name, worst)

    return cases


def catalog() -> list[TestCase]:
    """Every registered test case, in definition order."""
    return list(_catalog())


def get_problem(name: str) -> TestCase:
    """
    Look up a test case by name, ignoring case, ``_`` and spaces (``1d-test1``, ``1D_Test1``).

    :raises UnknownProblemError:    No case with this name.
    """

    key = str(name).strip().lower().replace('_', '-').replace(' ', '-')

    for case in _catalog():
        if case.slug == key:
            return case

    raise UnknownProblemError(
        func=get_problem, reason=f'{name!r}, known: {", ".join(case.slug for case in _catalog())}'
    )


_FIRST = np.array([1.0, -8.0, 0.0, 8.0, -1.0]) / 12.0
_SECOND = np.array([-1.0, 16.0, -30.0, 16.0, -1.0]) / 12.0
_OFFSETS = np.arange(-2, 3, dtype=np.float64)


class _ResidualTerms(NamedTuple):
    residual: FloatArray
    scale: FloatArray


def _residual_terms(case: TestCase, points: FloatArray, t: float, step: float | None) -> _ResidualTerms:
    if case.exact is None:
        raise RdgValueError('Case has no exact solution!', manufactured_residual, case.name)

    exact, problem = case.exact, case.problem
    x = np.asarray(points, dtype=np.float64).reshape(-1, case.dim)
    h = step or 1e-3 * case.length_scale
    ht = 1e-3

    u = exact(x, t)
    u_t = sum(w * exact(x, t + o * ht) for w, o in zip(_FIRST, _OFFSETS)) / ht

    convection = np.zeros_like(u)
    laplacian = np.zeros_like(u)

    for i in range(case.dim):
        shift = np.zeros(case.dim)
        shift[i] = h

        for o, w1, w2 in zip(_OFFSETS, _FIRST, _SECOND):
            xs = x + o * shift
            us = exact(xs, t)

            if problem.velocity is not None and w1 != 0.0:
                b = np.broadcast_to(problem.velocity(xs), xs.shape)[..., i]
                convection += w1 * b * problem.flux(us) / h

            # second derivatives from one difference of the hand gradient
            if case.gradient is not None:
                laplacian += w1 * np.asarray(case.gradient(xs, t))[..., i] / h
            else:
                laplacian += w2 * us / h ** 2

    diffusion = problem.eps * laplacian
    reaction = np.zeros_like(u) if problem.reaction is None else problem.reaction(x, u)
    source = np.zeros_like(u) if problem.source is None else problem.source(x, t)

    residual = u_t + convection - diffusion + reaction - source
    scale = 1.0 + np.abs(u_t) + np.abs(convection) + np.abs(diffusion) + np.abs(reaction) + np.abs(source)

    return _ResidualTerms(residual, scale)


def manufactured_residual(case: TestCase, points: FloatArray, t: float, step: float | None = None) -> FloatArray:
    """
    ``u_t + div(b f(u)) - eps laplace(u) + r(x, u) - g`` of the exact solution, derivatives by fourth-order central
    differences.

    :param case:        Case with an exact solution.
    :param points:      Points of shape (n, d).
    :param t:           Time.
    :param step:        Spatial difference step, default ``1e-3 * case.length_scale``.

    :raises RdgValueError:  The case has no exact solution.
    """
    return _residual_terms(case, points, t, step).residual


def self_check(case: TestCase, samples: int = 200, seed: int = 0) -> float:
    """
    Largest residual of the exact solution at random space-time samples, relative to the size of the PDE terms.
    """

    rng = np.random.default_rng(seed)
    lower, upper = np.asarray(case.lower), np.asarray(case.upper)

    points = lower + (upper - lower) * rng.random((samples, case.dim))
    times = rng.uniform(0.0, case.t_final, samples)

    worst = 0.0

    for x, t in zip(points, times):
        terms = _residual_terms(case, x[None, :], float(t), None)
        worst = max(worst, float(np.max(np.abs(terms.residual) / terms.scale)))

    return worst


class Overshoot(NamedTuple):
    overshoot: float
    """Largest excursion above the upper bound, zero when there is none."""

    undershoot: float
    """Largest excursion below the lower bound, zero when there is none."""


def overshoot(values: FloatArray, upper: float, lower: float) -> Overshoot:
    values = np.asarray(values, dtype=np.float64)

    if values.size == 0:
        return Overshoot(0.0, 0.0)

    return Overshoot(max(0.0, float(values.max()) - upper), max(0.0, lower - float(values.min())))


class CaseRun(NamedTuple):
    case: TestCase
    space: RdgSpace
    system: SemiDiscreteSystem
    dofs: FloatArray
    t: float
    dt: float
    steps: int
    wall_time: float

    @property
    def q(self) -> list[FloatArray]:
        """Auxiliary variable at the final time, empty without diffusion."""
        return self.system.auxiliary(self.t, self.dofs)


def run_case(
    case: TestCase, k: int, cells: int | Sequence[int], *, cfl: float | None = None, t_final: float | None = None,
    step_exponent: float | None = None,
    method: SolverMethod = SolverMethod.AUTO, tol: float = 1e-10, threads: int | None = None,
    mesh_ratio: float | None = None, seed: int | None = 0,
    callback: Callable[[StepRecord, FloatArray], Any] | None = None
) -> CaseRun:
    """
    Project the initial data and integrate a case up to its final time with the IMEX scheme.

    :param case:        Test case.
    :param k:           Reconstruction order.
    :param cells:       Elements per direction.
    :param cfl:         Override of the case CFL number, ``dt = cfl * h_min ** step_exponent``.
    :param step_exponent:   Override of the case step exponent, ``(k + 1) / 3`` by default.
    :param t_final:     Override of the case final time.
    :param method:      Linear solver of the mass and stage systems.
    :param tol:         Tolerance of the iterative linear solver.
    :param threads:     Worker threads for the reconstruction tables.
    :param mesh_ratio:  Random element sizes up to this ratio, uniform mesh when None.
    :param seed:        Seed of the random element sizes.
    :param callback:    Called after every step.
    """

    cfl = case.cfl if cfl is None else cfl
    t_final = case.t_final if t_final is None else t_final

    start = time.perf_counter()

    mesh = case.mesh(cells, mesh_ratio, seed)
    space = build_space(mesh, k, threads)
    system = SemiDiscreteSystem(space, case.problem, method, tol)

    dt = cfl_step(mesh.h_min, cfl, case.step_exponent_for(k) if step_exponent is None else step_exponent)
    result = advance(system, project_initial(space, case.initial), 0.0, t_final, dt, callback=callback)

    wall_time = time.perf_counter() - start

    logger.info(
        '%s k=%d on %s elements: %d steps of %.3e in %.2fs',
        case.name, k, 'x'.join(map(str, mesh.shape)), result.steps, dt, wall_time
    )

    return CaseRun(case, space, system, result.dofs, result.t, dt, result.steps, wall_time)


def case_errors(run: CaseRun, reference: SolutionDump | None = None) -> L2Errors | None:
    """
    L2 errors of a finished run against the exact solution, or against a surrogate reference.

    The gradient error compares ``q / sqrt(eps)`` when the problem diffuses, the broken gradient of the solution
    otherwise. Surrogate references only give the solution error; None when neither is available.
    """

    case, t = run.case, run.t

    if case.exact is None:
        if reference is None:
            return None

        return l2_error(run.space, run.dofs, reference.evaluate)

    exact, gradient = case.exact, case.gradient

    return l2_error(
        run.space, run.dofs, lambda x: exact(x, t),
        gradient=None if gradient is None else (lambda x: gradient(x, t)),
        q_dofs=run.q if case.problem.eps > 0.0 else None, eps=case.problem.eps or 1.0
    )


def reference_path(
    cache_dir: str | PathLike[str], case: TestCase, k: int, cells: int | Sequence[int], t_final: float | None = None
) -> Path:
    cells_ = _per_direction(cells, case.dim)
    t_final = case.t_final if t_final is None else t_final

    return Path(cache_dir) / f'{case.slug}_k{k}_n{"x".join(map(str, cells_))}_t{t_final:g}.csv'


def reference_solution(
    case: TestCase, k: int, cells: int | Sequence[int], cache_dir: str | PathLike[str],
    t_final: float | None = None, **kwargs: Any
) -> SolutionDump:
    """
    Fine-mesh solution used as the reference of a case without exact solution, read from `cache_dir` when present.

    :param kwargs:      Forwarded to `run_case`.
    """

    path = reference_path(cache_dir, case, k, cells, t_final)

    if path.exists():
        logger.info('using cached reference %s', path)
        return read_dump(path)

    logger.info('computing reference for %s on %s elements per direction', case.name, cells)

    run = run_case(case, k, cells, t_final=t_final, **kwargs)
    write_dump(run.space, run.dofs, path, problem=case.slug, t=f'{run.t:.17g}')

    return read_dump(path)
