from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
import scipy.sparse

from .abstract import SplitSystem
from .exceptions import LinearSolveFailureError, RdgError, RdgValueError
from .linalg import SparseOperator, SparseSolver, as_operator
from .polynomials import legendre_eval_all
from .rdg import RdgSpace, mass_matrix
from .timestepping import StageSolver
from .types import (
    BoundaryCondition, BoundaryKind, ConvectiveFlux, FloatArray, IntArray, SolverMethod, SpaceFunction,
    SpaceTimeFunction
)

__all__ = [
    'PdeProblem',

    'lax_friedrichs_flux',

    'DiffusionOperators', 'assemble_diffusion',

    'convection_reaction_source_residual',

    'SemiDiscreteSystem', 'RhsResult', 'semidiscrete_rhs'
]

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[FloatArray], FloatArray]
ReactionFunction = Callable[[FloatArray, FloatArray], FloatArray]


@dataclass(frozen=True)
class PdeProblem:
    """
    ``u_t + div(b(x) f(u)) - eps * laplace(u) + r(x, u) = g(x, t)``.

    Missing velocity, reaction or source terms are zero.
    """

    dim: int
    boundary: tuple[BoundaryCondition, ...]
    eps: float = 0.0
    velocity: SpaceFunction | None = None
    flux: ScalarFunction = ConvectiveFlux.LINEAR
    flux_derivative: ScalarFunction | None = None
    reaction: ReactionFunction | None = None
    source: SpaceTimeFunction | None = None

    def __post_init__(self) -> None:
        if not self.eps >= 0.0:
            raise RdgValueError('Diffusion coefficient must be nonnegative!', PdeProblem, self.eps)

        if len(self.boundary) != self.dim:
            raise RdgValueError('Need one boundary condition per direction!', PdeProblem, len(self.boundary))

        if self.velocity is not None and self.flux_derivative is None and not isinstance(self.flux, ConvectiveFlux):
            raise RdgValueError('A custom flux needs its derivative for the viscosity constant!', PdeProblem)

    @property
    def dflux(self) -> ScalarFunction:
        if self.flux_derivative is not None:
            return self.flux_derivative

        return self.flux.derivative  # type: ignore[attr-defined]

    @property
    def periodic(self) -> tuple[bool, ...]:
        return tuple(bc.kind is BoundaryKind.PERIODIC for bc in self.boundary)


def lax_friedrichs_flux(
    u_minus: FloatArray, u_plus: FloatArray, f: ScalarFunction, df: ScalarFunction,
    speed: FloatArray | float = 1.0, speed_bound: FloatArray | float | None = None
) -> FloatArray:
    """
    Local Lax-Friedrichs flux ``(speed (f(u-) + f(u+)) - alpha (u+ - u-)) / 2``.

    :param u_minus:         Trace from the negative side.
    :param u_plus:          Trace from the positive side.
    :param f:               Convective nonlinearity.
    :param df:              Its derivative.
    :param speed:           Normal velocity ``b . n`` multiplying f, 1 for the bare flux.
    :param speed_bound:     Bound of ``|b . n|`` used in the viscosity, default ``|speed|``.

    :return:                Flux values, with viscosity ``alpha = max(|f'(u-)|, |f'(u+)|) * speed_bound``.
    """

    u_minus = np.asarray(u_minus, dtype=np.float64)
    u_plus = np.asarray(u_plus, dtype=np.float64)

    bound = np.abs(speed) if speed_bound is None else speed_bound
    alpha = np.maximum(np.abs(df(u_minus)), np.abs(df(u_plus))) * bound

    return 0.5 * (speed * (f(u_minus) + f(u_plus)) - alpha * (u_plus - u_minus))


class _Topology(NamedTuple):
    """Neighbors of every element along one direction, -1 where there is none."""

    left: IntArray
    right: IntArray
    left_boundary: IntArray
    right_boundary: IntArray


def _topology(space: RdgSpace, direction: int) -> _Topology:
    mesh = space.mesh
    grid = mesh.element_grid[:, direction]
    n, stride = mesh.shape[direction], mesh.strides[direction]
    elements = np.arange(mesh.n_elements)

    if mesh.periodic[direction]:
        right = elements + np.where(grid == n - 1, -(n - 1) * stride, stride)
        left = elements + np.where(grid == 0, (n - 1) * stride, -stride)
        none = np.empty(0, dtype=np.int64)

        return _Topology(left, right, none, none)

    right = np.where(grid == n - 1, -1, elements + stride)
    left = np.where(grid == 0, -1, elements - stride)

    return _Topology(left, right, np.flatnonzero(grid == 0), np.flatnonzero(grid == n - 1))


def _face_jacobians(space: RdgSpace, direction: int) -> FloatArray:
    return np.prod(np.delete(space.mesh.element_sizes, direction, axis=1) / 2.0, axis=1)


def _check_boundary(space: RdgSpace, problem: PdeProblem) -> None:
    if problem.dim != space.mesh.dim or problem.periodic != space.mesh.periodic:
        raise RdgValueError(
            'Mesh periodicity does not match the boundary conditions!', 'ldg', (space.mesh.periodic, problem.periodic)
        )


class DiffusionOperators(NamedTuple):
    """
    Per-direction diffusion operators on the DoF space.

    ``M q_i = B_i u + lift_i(t)`` and the diffusion part of ``M u_t`` is ``sum_i A_i q_i``.
    """

    a: tuple[SparseOperator, ...]
    b: tuple[SparseOperator, ...]
    lifts: Callable[[float], list[FloatArray]]


class _BlockAssembler:
    """Collects element-pair blocks of a broken Legendre operator along one direction."""

    def __init__(self, space: RdgSpace, direction: int) -> None:
        self.space = space
        self.nb = space.order.n_coeffs

        alphas = space.order.poly_indices.alphas
        sizes = space.mesh.element_sizes

        self.delta = np.ones((self.nb, self.nb))
        self.weights = np.ones((space.mesh.n_elements, self.nb))

        for j in range(space.mesh.dim):
            if j == direction:
                continue

            self.delta *= alphas[:, j][:, None] == alphas[:, j][None, :]
            self.weights *= sizes[:, j][:, None] / (2 * alphas[:, j] + 1)[None, :]

        self.rows: list[IntArray] = []
        self.cols: list[IntArray] = []
        self.values: list[FloatArray] = []

    def add(self, pattern: FloatArray, rows: IntArray, cols: IntArray, scale: float = 1.0) -> None:
        """Add ``scale * pattern[beta, alpha]`` times the transverse mass to the blocks (rows[n], cols[n])."""

        if not len(rows):
            return

        nb = self.nb
        local = np.arange(nb)

        blocks = scale * pattern[None] * self.delta[None] * self.weights[rows][:, None, :]

        r, c = np.broadcast_arrays(
            rows[:, None, None] * nb + local[None, :, None], cols[:, None, None] * nb + local[None, None, :]
        )

        self.rows.append(r.ravel())
        self.cols.append(c.ravel())
        self.values.append(blocks.ravel())

    def build(self) -> SparseOperator:
        n = self.space.n_coeffs

        return as_operator(
            (np.concatenate(self.values), (np.concatenate(self.rows), np.concatenate(self.cols))), (n, n)
        )


def _derivative_table(space: RdgSpace) -> FloatArray:
    """``D[a, b] = int L^a (L^b)'`` over [-1, 1]."""

    rule = space.basis.rule
    values, derivs = legendre_eval_all(space.order.k, rule.nodes, derivative=True)

    return np.einsum('aq,bq,q->ab', values, derivs, rule.weights)


def _dg_diffusion(space: RdgSpace, direction: int) -> tuple[SparseOperator, SparseOperator]:
    """Broken Legendre matrices of the alternating-flux LDG pair along one direction, without the sqrt(eps)."""

    topo = _topology(space, direction)
    a_i = space.order.poly_indices.alphas[:, direction]

    table = _derivative_table(space)
    volume = table[a_i[None, :], a_i[:, None]]
    ones = np.ones_like(volume)
    sign_test = (-1.0) ** a_i[:, None] * ones
    sign_trial = (-1.0) ** a_i[None, :] * ones

    elements = np.arange(space.mesh.n_elements)
    interior_right = np.setdiff1d(elements, topo.right_boundary)
    has_left = np.flatnonzero(topo.left >= 0)
    has_right = np.flatnonzero(topo.right >= 0)

    # u-hat = u-, so the right face tests the own trace and the left face the left neighbor's
    b = _BlockAssembler(space, direction)
    b.add(volume, elements, elements)
    b.add(ones, interior_right, interior_right, -1.0)
    b.add(sign_test, has_left, topo.left[has_left])

    # q-hat = q+, the interior trace on a right Dirichlet face
    a = _BlockAssembler(space, direction)
    a.add(volume, elements, elements)
    a.add(sign_trial, has_right, topo.right[has_right], -1.0)
    a.add(ones, topo.right_boundary, topo.right_boundary, -1.0)
    a.add(sign_trial * sign_test, elements, elements)

    return -a.build(), -b.build()


def _dg_dirichlet_lift(space: RdgSpace, problem: PdeProblem, direction: int, t: float) -> FloatArray:
    topo = _topology(space, direction)
    out = np.zeros((space.mesh.n_elements, space.order.n_coeffs))
    data = problem.boundary[direction].data

    if data is None:
        return out.ravel()

    jacobians = _face_jacobians(space, direction)

    for side, elements in ((1, topo.right_boundary), (-1, topo.left_boundary)):
        reference, weights = space.basis.face_points(direction, side)
        values = space.basis.face_values(direction, side)

        x = space.mesh.to_physical(reference)[elements]
        g = np.broadcast_to(data(x, t), x.shape[:-1])

        out[elements] += side * (g * weights[None, :] * jacobians[elements, None]) @ values.T

    return out.ravel()


def assemble_diffusion(space: RdgSpace, problem: PdeProblem) -> DiffusionOperators:
    """
    LDG diffusion operators with alternating fluxes over the DoF space.

    Nothing is assembled when `problem.eps` is zero.
    """

    _check_boundary(space, problem)

    if problem.eps == 0.0:
        return DiffusionOperators((), (), lambda t: [])

    r = space.reconstruction
    scale = np.sqrt(problem.eps)

    a_ops, b_ops = [], []

    for direction in range(space.mesh.dim):
        a_dg, b_dg = _dg_diffusion(space, direction)

        a_ops.append(as_operator(scale * (r.T @ a_dg @ r)))
        b_ops.append(as_operator(scale * (r.T @ b_dg @ r)))

    def lifts(t: float) -> list[FloatArray]:
        return [
            scale * (r.T @ _dg_dirichlet_lift(space, problem, direction, t))
            for direction in range(space.mesh.dim)
        ]

    logger.debug('assembled diffusion operators, nnz(A_1)=%d nnz(B_1)=%d', a_ops[0].nnz, b_ops[0].nnz)

    return DiffusionOperators(tuple(a_ops), tuple(b_ops), lifts)


def convection_reaction_source_residual(
    space: RdgSpace, problem: PdeProblem, dofs: FloatArray, t: float
) -> FloatArray:
    """
    Convection, reaction and source terms tested against every reduced basis function.

    :param space:       Space.
    :param problem:     Problem data.
    :param dofs:        DoF vector.
    :param t:           Time.

    :return:            Vector of size `space.n_dofs`.
    """

    _check_boundary(space, problem)

    mesh, basis = space.mesh, space.basis
    coeffs = space.local_coefficients(dofs)

    reference, weights = basis.points
    x = mesh.to_physical(reference)
    u = coeffs @ basis.values
    jw = (mesh.element_volumes / 2.0 ** mesh.dim)[:, None] * weights[None, :]

    out = np.zeros_like(coeffs)

    if problem.velocity is not None:
        velocity = np.broadcast_to(problem.velocity(x), x.shape)
        fu = problem.flux(u)

        for i in range(mesh.dim):
            scaled = jw * velocity[..., i] * fu * (2.0 / mesh.element_sizes[:, i])[:, None]
            out += scaled @ basis.gradients[i].T

        for direction in range(mesh.dim):
            _convective_faces(space, problem, coeffs, t, direction, out)

    if problem.reaction is not None:
        out -= (jw * np.broadcast_to(problem.reaction(x, u), u.shape)) @ basis.values.T

    if problem.source is not None:
        out += (jw * np.broadcast_to(problem.source(x, t), u.shape)) @ basis.values.T

    return np.asarray(space.reconstruction.T @ out.ravel())


def _convective_faces(
    space: RdgSpace, problem: PdeProblem, coeffs: FloatArray, t: float, direction: int, out: FloatArray
) -> None:
    mesh, basis = space.mesh, space.basis
    topo = _topology(space, direction)
    jacobians = _face_jacobians(space, direction)

    ref_right, weights = basis.face_points(direction, 1)
    ref_left, _ = basis.face_points(direction, -1)
    v_right, v_left = basis.face_values(direction, 1), basis.face_values(direction, -1)

    def speed(points: FloatArray) -> FloatArray:
        return np.broadcast_to(problem.velocity(points), points.shape)[..., direction]  # type: ignore[misc]

    f, df = problem.flux, problem.dflux

    # interior faces, each one the right face of its negative side element
    owners = np.flatnonzero(topo.right >= 0)
    neighbors = topo.right[owners]

    x = mesh.to_physical(ref_right)[owners]
    b = speed(x)
    flux = lax_friedrichs_flux(
        coeffs[owners] @ v_right, coeffs[neighbors] @ v_left, f, df, b, np.abs(b).max(axis=-1, keepdims=True)
    )
    flux *= weights[None, :] * jacobians[owners, None]

    np.add.at(out, owners, -flux @ v_right.T)
    np.add.at(out, neighbors, flux @ v_left.T)

    data = problem.boundary[direction].data

    if data is None:
        return

    # Dirichlet faces: exterior state is the data where the characteristic enters the domain
    for side, elements, reference, values in (
        (1, topo.right_boundary, ref_right, v_right), (-1, topo.left_boundary, ref_left, v_left)
    ):
        x = mesh.to_physical(reference)[elements]
        b = speed(x)
        g = np.broadcast_to(data(x, t), b.shape)
        interior = coeffs[elements] @ values

        exterior = np.where(side * b * df(g) < 0.0, g, interior)
        u_minus, u_plus = (interior, exterior) if side == 1 else (exterior, interior)

        flux = lax_friedrichs_flux(u_minus, u_plus, f, df, b, np.abs(b).max(axis=-1, keepdims=True))
        out[elements] -= side * (flux * weights[None, :] * jacobians[elements, None]) @ values.T


@dataclass(eq=False)
class SemiDiscreteSystem(SplitSystem):
    """
    ``M u' = sum_i A_i q_i + N(u, t)`` with ``M q_i = B_i u + lift_i(t)``.

    Diffusion is the implicit part, convection, reaction and source the explicit one.
    """

    space: RdgSpace
    problem: PdeProblem
    method: SolverMethod = SolverMethod.AUTO
    tol: float = 1e-10

    _stage_solvers: dict[float, StageSolver] = field(init=False, repr=False, default_factory=dict)

    def __post_init__(self) -> None:
        _check_boundary(self.space, self.problem)

    @property
    def size(self) -> int:
        return self.space.n_dofs

    @cached_property
    def mass(self) -> SparseOperator:
        return mass_matrix(self.space)

    @cached_property
    def mass_solver(self) -> SparseSolver:
        return SparseSolver(self.mass, self.method, self.tol)

    @cached_property
    def diffusion(self) -> DiffusionOperators:
        return assemble_diffusion(self.space, self.problem)

    @property
    def has_implicit(self) -> bool:
        return self.problem.eps > 0.0

    def residual(self, t: float, u: FloatArray) -> FloatArray:
        return convection_reaction_source_residual(self.space, self.problem, u, t)

    def auxiliary(self, t: float, u: FloatArray) -> list[FloatArray]:
        """DoFs of ``q_i = sqrt(eps) d_i u`` for every direction, empty without diffusion."""

        ops = self.diffusion

        return [self._mass_solve(b @ u + lift) for b, lift in zip(ops.b, ops.lifts(t))]

    def explicit(self, t: float, u: FloatArray) -> FloatArray:
        return self._mass_solve(self.residual(t, u))

    def implicit(self, t: float, u: FloatArray) -> FloatArray:
        if not self.has_implicit:
            return np.zeros_like(u)

        return self._mass_solve(sum(a @ q for a, q in zip(self.diffusion.a, self.auxiliary(t, u))))

    def stage_matrix(self, coefficient: float) -> SparseOperator:
        """Block matrix ``[[M, -c A_1, ..., -c A_d], [-B_i, ..., M]]`` of the coupled stage system in (u, q)."""

        ops, mass, d = self.diffusion, self.mass, self.space.mesh.dim

        blocks: list[list[SparseOperator | None]] = [[mass, *(-coefficient * a for a in ops.a)]]

        for i, b in enumerate(ops.b):
            blocks.append([-b, *(mass if j == i else None for j in range(d))])

        return as_operator(scipy.sparse.bmat(blocks, format='csr'))

    def stage_solver(self, coefficient: float) -> StageSolver:
        if coefficient not in self._stage_solvers:
            self._stage_solvers[coefficient] = StageSolver(
                coefficient, self.stage_matrix(coefficient), self.method, self.tol
            )

        return self._stage_solvers[coefficient]

    def solve_implicit(self, t: float, coefficient: float, rhs: FloatArray) -> FloatArray:
        if not self.has_implicit or coefficient == 0.0:
            return np.array(rhs, dtype=np.float64)

        block_rhs = np.concatenate([self.mass @ rhs, *self.diffusion.lifts(t)])

        return self.stage_solver(coefficient).solve(block_rhs)[:self.size]

    def _mass_solve(self, rhs: FloatArray) -> FloatArray:
        try:
            return self.mass_solver.solve(rhs)
        except RdgError as e:
            raise LinearSolveFailureError(func=self._mass_solve, reason=e.message) from e


class RhsResult(NamedTuple):
    du_dt: FloatArray
    q: list[FloatArray]


def semidiscrete_rhs(
    space: RdgSpace, problem: PdeProblem, dofs: FloatArray, t: float, system: SemiDiscreteSystem | None = None
) -> RhsResult:
    """
    Time derivative of the DoFs and the auxiliary variable.

    :param system:      Prebuilt system to reuse its operators and factorizations.

    :raises LinearSolveFailureError:    A mass matrix solve failed.
    """

    system = system or SemiDiscreteSystem(space, problem)
    dofs = np.asarray(dofs, dtype=np.float64)

    q = system.auxiliary(t, dofs)
    total = system.residual(t, dofs) + sum((a @ qi for a, qi in zip(system.diffusion.a, q)), np.zeros(system.size))

    return RhsResult(system._mass_solve(total), q)