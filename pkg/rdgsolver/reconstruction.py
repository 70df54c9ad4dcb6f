from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Any, NamedTuple, Sequence

import numpy as np

from .exceptions import ExactSingularError, SingularMatrixError, UnsupportedOrderError
from .linalg import SparseOperator, as_operator, lu_factor
from .mesh import STENCIL_WIDTH, TensorMesh, stencil_positions
from .polynomials import (
    IndexSet, QuadratureRule, TensorBasis, broken_gradient_distance, broken_l2_distance, default_rule,
    element_moments, index_set, legendre_eval_all
)
from .types import FloatArray, IntArray, SpaceFunction, StencilKind

__all__ = [
    'WELL_POSED_ORDERS', 'CONDITION_LIMIT',

    'OrderPair',

    'StencilGeometry', 'stencil_geometry',

    'moment_factors_1d', 'moment_matrix',

    'determinant_oracle_1d', 'determinant_lower_bound_1d', 'determinant_oracle', 'determinant_lower_bound',

    'WellposednessReport', 'wellposedness_check',

    'ReconstructionTable', 'reconstruction_map',

    'ReconstructionTables', 'build_tables',

    'ErrorRecord', 'observed_rates', 'reconstruction_error_study'
]

logger = logging.getLogger(__name__)

WELL_POSED_ORDERS = {2: 0, 5: 1}
"""Reconstruction order k mapped to the moment order m with ``k + 1 = 3 (m + 1)``."""

CONDITION_LIMIT = 1e12
"""Moment matrices with a larger 1-norm condition estimate are treated as singular."""


@dataclass(frozen=True)
class OrderPair:
    """Reconstruction order `k`, moment order `m` and dimension `d`."""

    k: int
    m: int
    d: int = 1

    def __post_init__(self) -> None:
        if self.d not in (1, 2):
            raise UnsupportedOrderError('Only one and two dimensional spaces are supported!', OrderPair, self.d)

        if WELL_POSED_ORDERS.get(self.k) != self.m:
            raise UnsupportedOrderError(func=OrderPair, reason=f'k={self.k}, m={self.m}')

    @classmethod
    def from_order(cls, k: int, d: int = 1) -> OrderPair:
        if k not in WELL_POSED_ORDERS:
            raise UnsupportedOrderError(
                f'Reconstruction order must be one of {sorted(WELL_POSED_ORDERS)}!', cls.from_order, k
            )

        return cls(k, WELL_POSED_ORDERS[k], d)

    @property
    def poly_indices(self) -> IndexSet:
        return index_set(self.k, self.d)

    @property
    def moment_indices(self) -> IndexSet:
        return index_set(self.m, self.d)

    @property
    def n_coeffs(self) -> int:
        return (self.k + 1) ** self.d

    @property
    def n_moments(self) -> int:
        return (self.m + 1) ** self.d

    @property
    def n_rows(self) -> int:
        return STENCIL_WIDTH ** self.d * self.n_moments


class StencilGeometry(NamedTuple):
    """Per-direction size ratios and scaled offsets of the stencil members relative to the owner."""

    ratios: tuple[FloatArray, ...]
    offsets: tuple[FloatArray, ...]
    kinds: tuple[StencilKind, ...]

    def key(self, decimals: int = 12) -> tuple[Any, ...]:
        return (
            self.kinds,
            tuple(tuple(np.round(r, decimals)) for r in self.ratios),
            tuple(tuple(np.round(b, decimals)) for b in self.offsets)
        )

    @property
    def min_ratio(self) -> float:
        return min(float(r.min()) for r in self.ratios)


def stencil_geometry(mesh: TensorMesh, element: int | Sequence[int]) -> StencilGeometry:
    owner = mesh.multi_index(element) if isinstance(element, (int, np.integer)) else tuple(element)
    mesh._check_element(owner)

    per_direction = [mesh.stencil_geometry_1d(direction, t) for direction, t in enumerate(owner)]

    return StencilGeometry(
        tuple(g[0] for g in per_direction), tuple(g[1] for g in per_direction),
        tuple(mesh.stencil_kind_1d(direction, t) for direction, t in enumerate(owner))
    )


def moment_factors_1d(
    ratios: FloatArray, offsets: FloatArray, k: int, m: int, rule: QuadratureRule | None = None
) -> FloatArray:
    """
    One-dimensional moment factors of the three stencil members.

    ``F[s, beta, alpha] = (2 beta + 1) / 2 * int L^beta(x) L^alpha(a_s x + b_s) dx`` over [-1, 1].

    :param ratios:      Member size over owner size, shape (3,).
    :param offsets:     Scaled member center offsets ``2 (x_s - x_owner) / h_owner``, shape (3,).
    :param k:           Reconstruction order.
    :param m:           Moment order.
    :param rule:        Quadrature, default `default_rule(k)`.

    :return:            Array of shape (3, m + 1, k + 1).
    """

    rule = rule or default_rule(k)

    test = legendre_eval_all(m, rule.nodes)
    mapped = np.asarray(ratios)[:, None] * rule.nodes[None, :] + np.asarray(offsets)[:, None]
    trial = legendre_eval_all(k, mapped)

    factors = np.einsum('bq,asq,q->sba', test, trial, rule.weights)

    return factors * ((2 * np.arange(m + 1) + 1) / 2.0)[None, :, None]


def _assemble(factors: Sequence[FloatArray], order: OrderPair) -> FloatArray:
    alphas = order.poly_indices.alphas
    betas = order.moment_indices.alphas
    positions = np.array(stencil_positions(order.d), dtype=np.int64).reshape(-1, order.d)

    out = np.ones((len(positions), len(betas), len(alphas)))

    for j, factor in enumerate(factors):
        out *= factor[positions[:, j][:, None, None], betas[:, j][None, :, None], alphas[:, j][None, None, :]]

    return out.reshape(order.n_rows, order.n_coeffs)


def _matrix_from_geometry(geometry: StencilGeometry, order: OrderPair) -> FloatArray:
    return _assemble(
        [moment_factors_1d(a, b, order.k, order.m) for a, b in zip(geometry.ratios, geometry.offsets)], order
    )


def _equilibrated_inverse(matrix: FloatArray) -> FloatArray:
    # power of two row and column scalings, undone exactly after the inversion
    row_exp = -np.frexp(np.abs(matrix).max(axis=1))[1]
    scaled = np.ldexp(matrix, row_exp[:, None])
    col_exp = -np.frexp(np.abs(scaled).max(axis=0))[1]
    scaled = np.ldexp(scaled, col_exp[None, :])

    inverse = lu_factor(scaled).inverse()

    return np.ldexp(np.ldexp(inverse, col_exp[:, None]), row_exp[None, :])


def _inverse_from_geometry(geometry: StencilGeometry, order: OrderPair) -> FloatArray:
    """
    Inverse of the tensor moment matrix as the permuted Kronecker product of the 1D inverses.

    Each 1D factor is reshaped to its square ``(3 (m + 1), k + 1)`` matrix, inverted, and the
    entries of the tensor inverse are the products of the 1D entries.
    """

    k, m = order.k, order.m
    alphas = order.poly_indices.alphas
    betas = order.moment_indices.alphas
    positions = np.array(stencil_positions(order.d), dtype=np.int64).reshape(-1, order.d)

    out = np.ones((len(alphas), len(positions), len(betas)))

    for a, b, j in zip(geometry.ratios, geometry.offsets, range(order.d)):
        square = moment_factors_1d(a, b, k, m).reshape(STENCIL_WIDTH * (m + 1), k + 1)
        inverse = _equilibrated_inverse(square).reshape(k + 1, STENCIL_WIDTH, m + 1)

        out *= inverse[alphas[:, j][:, None, None], positions[:, j][None, :, None], betas[:, j][None, None, :]]

    return out.reshape(order.n_coeffs, order.n_rows)


def moment_matrix(mesh: TensorMesh, element: int | Sequence[int], order: OrderPair) -> FloatArray:
    """
    Square moment matrix of an element.

    Rows are blocked by stencil member (direction 1 fastest) then moment index, columns follow
    the trace order of the reconstruction indices.
    """

    return _matrix_from_geometry(stencil_geometry(mesh, element), order)


def determinant_oracle_1d(kind: StencilKind, ratios: FloatArray, k: int) -> float:
    """
    Closed-form determinant of the one-dimensional moment matrix.

    :param kind:        Stencil placement.
    :param ratios:      Member size over owner size, left to right.
    :param k:           Reconstruction order, 2 or 5.
    """

    if kind is StencilKind.CENTER:
        left, right = float(ratios[0]), float(ratios[2])

        if k == 2:
            return 2.0 * (left + 1) * (right + 1) * (left + right + 1)

        return 252.0 * left * right * (left + 1) ** 4 * (right + 1) ** 4 * (left + right + 1) ** 4

    near = float(ratios[1])
    far = float(ratios[0] if kind is StencilKind.BACKWARD else ratios[2])

    if k == 2:
        return 2.0 * (near + 1) * (near + far) * (near + far + 1)

    return 252.0 * near * far * (near + 1) ** 4 * (near + far) ** 4 * (near + far + 1) ** 4


def determinant_lower_bound_1d(kind: StencilKind, a_min: float, k: int) -> float:
    """Lower bound of `determinant_oracle_1d` over meshes whose size ratios all exceed `a_min`."""

    a = a_min

    if kind is StencilKind.CENTER:
        if k == 2:
            return 2.0 * (a + 1) ** 2 * (2 * a + 1)

        return 252.0 * a ** 2 * (a + 1) ** 8 * (2 * a + 1) ** 4

    if k == 2:
        return 4.0 * a * (a + 1) * (2 * a + 1)

    return 4032.0 * a ** 6 * (a + 1) ** 4 * (2 * a + 1) ** 4


def determinant_oracle(geometry: StencilGeometry, order: OrderPair) -> float:
    """``|det|`` of the tensor moment matrix: product of the 1D determinants raised to ``(k + 1)^(d - 1)``."""

    power = (order.k + 1) ** (order.d - 1)

    return float(np.prod([
        determinant_oracle_1d(kind, ratios, order.k) ** power
        for kind, ratios in zip(geometry.kinds, geometry.ratios)
    ]))


def determinant_lower_bound(geometry: StencilGeometry, order: OrderPair, a_min: float) -> float:
    power = (order.k + 1) ** (order.d - 1)

    return float(np.prod([determinant_lower_bound_1d(kind, a_min, order.k) ** power for kind in geometry.kinds]))


class WellposednessReport(NamedTuple):
    determinant: float
    condition: float
    oracle: float | None = None
    deviation: float | None = None
    lower_bound: float | None = None

    @property
    def oracle_match(self) -> bool | None:
        return None if self.deviation is None else self.deviation <= 1e-10

    @property
    def above_lower_bound(self) -> bool | None:
        if self.lower_bound is None:
            return None

        return abs(self.determinant) >= self.lower_bound * (1 - 1e-12)


def wellposedness_check(
    matrix: FloatArray, geometry: StencilGeometry | None = None, order: OrderPair | None = None,
    a_min: float | None = None, limit: float = CONDITION_LIMIT
) -> WellposednessReport:
    """
    Determinant and condition estimate of a moment matrix, compared to the closed forms when possible.

    :param matrix:      Square moment matrix.
    :param geometry:    Stencil geometry the matrix was built from, enables the oracle comparison.
    :param order:       Order pair the matrix was built for.
    :param a_min:       Smallest admissible size ratio, enables the lower bound check.
    :param limit:       Condition estimate above which the matrix is rejected.

    :raises SingularMatrixError:    Zero pivot or condition estimate above `limit`.
    """

    try:
        factor = lu_factor(matrix)
    except ExactSingularError as e:
        raise SingularMatrixError(func=wellposedness_check, reason='zero pivot') from e

    if not factor.condition <= limit:
        raise SingularMatrixError(func=wellposedness_check, reason=f'condition estimate {factor.condition:.3e}')

    if geometry is None or order is None:
        return WellposednessReport(factor.determinant, factor.condition)

    oracle = determinant_oracle(geometry, order)
    deviation = abs(abs(factor.determinant) - oracle) / oracle
    bound = None if a_min is None else determinant_lower_bound(geometry, order, a_min)

    return WellposednessReport(factor.determinant, factor.condition, oracle, deviation, bound)


@dataclass(frozen=True, eq=False)
class ReconstructionTable:
    """Moment matrix of one stencil geometry and its inverse, built from the 1D inverses."""

    owner: int
    order: OrderPair
    geometry: StencilGeometry
    matrix: FloatArray
    inverse: FloatArray
    determinant: float
    condition: float

    @property
    def kinds(self) -> tuple[StencilKind, ...]:
        return self.geometry.kinds

    def reconstruct(self, moments: FloatArray) -> FloatArray:
        """Legendre coefficients on the owner from stencil moments ordered like the matrix rows."""

        coeffs = self.inverse @ moments

        # one step of iterative refinement
        return coeffs + self.inverse @ (moments - self.matrix @ coeffs)

    @property
    def identity_residual(self) -> float:
        return float(np.abs(self.matrix @ self.inverse - np.eye(len(self.matrix))).max())


def _table_from_geometry(owner: int, geometry: StencilGeometry, order: OrderPair) -> ReconstructionTable:
    matrix = _matrix_from_geometry(geometry, order)

    try:
        factor = lu_factor(matrix)
    except ExactSingularError as e:
        raise SingularMatrixError(func=reconstruction_map, reason=f'element {owner}') from e

    if not factor.condition <= CONDITION_LIMIT:
        raise SingularMatrixError(
            func=reconstruction_map, reason=f'element {owner}, condition estimate {factor.condition:.3e}'
        )

    inverse = _inverse_from_geometry(geometry, order)
    matrix.setflags(write=False)
    inverse.setflags(write=False)

    return ReconstructionTable(owner, order, geometry, matrix, inverse, factor.determinant, factor.condition)


def reconstruction_map(mesh: TensorMesh, element: int | Sequence[int], order: OrderPair) -> ReconstructionTable:
    """
    Reconstruction table of a single element.

    :raises SingularMatrixError:    The moment system of the stencil is not uniquely solvable.
    """

    owner = element if isinstance(element, (int, np.integer)) else mesh.linear_index(element)

    return _table_from_geometry(int(owner), stencil_geometry(mesh, element), order)


@dataclass(frozen=True, eq=False)
class ReconstructionTables:
    """Reconstruction tables of every element of a mesh, shared between elements with equal stencil geometry."""

    mesh: TensorMesh
    order: OrderPair
    tables: tuple[ReconstructionTable, ...]
    table_index: IntArray

    def __getitem__(self, element: int) -> ReconstructionTable:
        return self.tables[self.table_index[element]]

    def __len__(self) -> int:
        return len(self.table_index)

    @cached_property
    def members(self) -> IntArray:
        return self.mesh.stencil_table[0]

    @cached_property
    def inverses(self) -> FloatArray:
        """Per-element inverses, shape (n_elements, n_coeffs, n_rows)."""
        return np.stack([t.inverse for t in self.tables])[self.table_index]

    @cached_property
    def operator(self) -> SparseOperator:
        """Sparse map from the moment vector to the element-major Legendre coefficients of all elements."""

        n, nk, nm = self.mesh.n_elements, self.order.n_coeffs, self.order.n_moments

        columns = (self.members[:, :, None] * nm + np.arange(nm)[None, None, :]).reshape(n, 1, -1)
        rows = np.arange(n * nk).reshape(n, nk, 1)

        columns, rows = np.broadcast_arrays(columns, rows)

        return as_operator((self.inverses.ravel(), (rows.ravel(), columns.ravel())), (n * nk, n * nm))

    def gather(self, dofs: FloatArray) -> FloatArray:
        """Stencil moments of every element, shape (n_elements, n_rows)."""
        return np.asarray(dofs).reshape(self.mesh.n_elements, -1)[self.members].reshape(self.mesh.n_elements, -1)

    def local_coefficients(self, dofs: FloatArray) -> FloatArray:
        """Legendre coefficients of the reconstruction on every element, shape (n_elements, n_coeffs)."""
        return np.einsum('eij,ej->ei', self.inverses, self.gather(dofs))


def build_tables(mesh: TensorMesh, order: OrderPair, threads: int | None = None) -> ReconstructionTables:
    """
    Build the reconstruction tables of a mesh, one per distinct stencil geometry.

    :param mesh:        Mesh.
    :param order:       Order pair, its dimension must match the mesh.
    :param threads:     Worker threads for table construction, None lets the executor decide.

    :raises SingularMatrixError:    Some stencil has a singular moment system.
    """

    if order.d != mesh.dim:
        raise UnsupportedOrderError('Order pair dimension does not match the mesh!', build_tables, order.d)

    keys: dict[tuple[Any, ...], int] = {}
    representatives: list[tuple[int, StencilGeometry]] = []
    table_index = np.empty(mesh.n_elements, dtype=np.int64)

    for element in range(mesh.n_elements):
        geometry = stencil_geometry(mesh, element)
        key = geometry.key()

        if key not in keys:
            keys[key] = len(representatives)
            representatives.append((element, geometry))

        table_index[element] = keys[key]

    with ThreadPoolExecutor(max_workers=threads) as executor:
        tables = tuple(executor.map(lambda rep: _table_from_geometry(rep[0], rep[1], order), representatives))

    logger.debug(
        'built %d reconstruction tables for %d elements (k=%d, m=%d, d=%d)',
        len(tables), mesh.n_elements, order.k, order.m, order.d
    )

    table_index.setflags(write=False)

    return ReconstructionTables(mesh, order, tables, table_index)


class ErrorRecord(NamedTuple):
    n_elements: int
    h: float
    error_l2: float
    error_h1: float
    rate_l2: float | None = None
    rate_h1: float | None = None


def observed_rates(h: Sequence[float], errors: Sequence[float]) -> list[float | None]:
    """``log(e_prev / e) / log(h_prev / h)`` for consecutive entries, None for the first one."""

    rates: list[float | None] = [None]

    for i in range(1, len(errors)):
        if errors[i] > 0.0 and errors[i - 1] > 0.0 and h[i] != h[i - 1]:
            rates.append(float(np.log(errors[i - 1] / errors[i]) / np.log(h[i - 1] / h[i])))
        else:
            rates.append(float('nan'))

    return rates


def reconstruction_error_study(
    u: SpaceFunction, meshes: Sequence[TensorMesh], order: OrderPair,
    gradient: SpaceFunction | None = None, threads: int | None = None
) -> list[ErrorRecord]:
    """
    Errors of the reconstruction of `u` from its moments on a sequence of meshes.

    :param u:           Smooth function of points (..., d).
    :param meshes:      Meshes, coarse to fine.
    :param order:       Order pair.
    :param gradient:    Gradient of `u`, returning (..., d). Without it the H1 column is NaN.
    :param threads:     Worker threads for table construction.

    :return:            One record per mesh with L2 and H1-seminorm errors and observed rates.
    """

    basis = TensorBasis(order.poly_indices, default_rule(order.k))

    h, l2, h1 = [], [], []

    for mesh in meshes:
        tables = build_tables(mesh, order, threads)

        dofs = element_moments(mesh, order.moment_indices, u, default_rule(order.k))
        coeffs = tables.local_coefficients(dofs)

        h.append(mesh.h_max)
        l2.append(broken_l2_distance(mesh, basis, coeffs, u))

        if gradient is None:
            h1.append(float('nan'))
        else:
            h1.append(float(np.sqrt(np.sum(broken_gradient_distance(mesh, basis, coeffs, gradient) ** 2))))

        logger.info('reconstruction error on %d elements: l2=%.3e h1=%.3e', mesh.n_elements, l2[-1], h1[-1])

    return [
        ErrorRecord(mesh.n_elements, hh, e0, e1, r0, r1)
        for mesh, hh, e0, e1, r0, r1 in zip(meshes, h, l2, h1, observed_rates(h, l2), observed_rates(h, h1))
    ]
