from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from os import PathLike
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import numpy as np
import scipy.sparse

from .exceptions import InvalidElementError, RdgRuntimeError, RdgValueError
from .linalg import SparseOperator, as_operator
from .mesh import TensorMesh, build_mesh
from .polynomials import (
    MultiIndex, QuadratureRule, TensorBasis, broken_gradient_distance, broken_l2_distance, default_rule,
    element_moments
)
from .reconstruction import OrderPair, ReconstructionTables, build_tables
from .types import FloatArray, IntArray, SpaceFunction, TraceSide

__all__ = [
    'RdgSpace', 'build_space',

    'LocalPoly',

    'project_initial', 'local_poly',

    'eval_solution', 'eval_gradient',

    'mass_matrix',

    'L2Errors', 'l2_error',

    'SolutionDump', 'write_dump', 'read_dump',

    'sample_grid', 'write_samples'
]

logger = logging.getLogger(__name__)

DUMP_COLUMNS = 'elem_index,alpha_index,coefficient'


@dataclass(frozen=True, eq=False)
class RdgSpace:
    """
    Reduced space: order-k element polynomials parameterized by the order-m Legendre moments of every element.

    DoFs are stored element-major, moment indices in trace order inside an element.
    """

    mesh: TensorMesh
    order: OrderPair
    tables: ReconstructionTables

    @property
    def n_dofs(self) -> int:
        return self.mesh.n_elements * self.order.n_moments

    @property
    def n_coeffs(self) -> int:
        """Size of the broken order-k Legendre coefficient vector."""
        return self.mesh.n_elements * self.order.n_coeffs

    def dof_index(self, element: int, alpha: Sequence[int]) -> int:
        if not 0 <= element < self.mesh.n_elements:
            raise InvalidElementError(func=self.dof_index, reason=element)

        return element * self.order.n_moments + self.order.moment_indices.position(alpha)

    def dof_pair(self, index: int) -> tuple[int, MultiIndex]:
        element, local = divmod(index, self.order.n_moments)

        return element, self.order.moment_indices[local]

    @cached_property
    def basis(self) -> TensorBasis:
        return TensorBasis(self.order.poly_indices, default_rule(self.order.k))

    @property
    def reconstruction(self) -> SparseOperator:
        """Sparse map from DoFs to the broken order-k Legendre coefficients."""
        return self.tables.operator

    @cached_property
    def dg_mass(self) -> FloatArray:
        """Diagonal of the Legendre mass matrix of the broken order-k space."""
        scale = 1.0 / np.prod(2 * self.order.poly_indices.alphas + 1, axis=-1)

        return (self.mesh.element_volumes[:, None] * scale[None, :]).ravel()

    @cached_property
    def owner_columns(self) -> IntArray:
        """Positions of the moment indices inside the order-k coefficient block."""
        return self.order.moment_indices.embed(self.order.poly_indices)

    def local_coefficients(self, dofs: FloatArray) -> FloatArray:
        """Legendre coefficients of every element, shape (n_elements, n_coeffs)."""
        return self.tables.local_coefficients(self._check(dofs))

    def _check(self, dofs: FloatArray) -> FloatArray:
        dofs = np.asarray(dofs, dtype=np.float64)

        if dofs.shape != (self.n_dofs, ):
            raise RdgValueError(f'Expected {self.n_dofs} DoFs!', self.local_coefficients, dofs.shape)

        return dofs


def build_space(mesh: TensorMesh, k: int | OrderPair, threads: int | None = None) -> RdgSpace:
    """
    Build the reduced space of order `k` on a mesh.

    :param mesh:        Mesh.
    :param k:           Reconstruction order (2 or 5) or a full order pair.
    :param threads:     Worker threads for the reconstruction tables.

    :raises UnsupportedOrderError:  `k` has no well-posed moment order.
    :raises SingularMatrixError:    Some stencil cannot be reconstructed.
    """

    order = k if isinstance(k, OrderPair) else OrderPair.from_order(k, mesh.dim)
    space = RdgSpace(mesh, order, build_tables(mesh, order, threads))

    if space.n_dofs * 3 ** mesh.dim != mesh.n_elements * order.n_coeffs:
        raise RdgRuntimeError(func=build_space, reason=f'{space.n_dofs} DoFs for {mesh.n_elements} elements')

    logger.info(
        'space k=%d m=%d on %s elements: %d DoFs (broken order-k space: %d)',
        order.k, order.m, 'x'.join(map(str, mesh.shape)), space.n_dofs, space.n_coeffs
    )

    return space


class LocalPoly(NamedTuple):
    """Reconstructed polynomial on one element as Legendre coefficients in trace order."""

    element: int
    coefficients: FloatArray

    def __call__(self, space: RdgSpace, points: FloatArray) -> FloatArray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, space.mesh.dim)
        elements = np.full(len(points), self.element)

        return self.coefficients @ space.basis.evaluate(space.mesh.to_reference(points, elements))


def project_initial(space: RdgSpace, u0: SpaceFunction, rule: QuadratureRule | None = None) -> FloatArray:
    """DoFs of `u0`: its Legendre moments of order m on every element."""
    return element_moments(space.mesh, space.order.moment_indices, u0, rule or default_rule(space.order.k)).ravel()


def local_poly(space: RdgSpace, dofs: FloatArray, element: int) -> LocalPoly:
    if not 0 <= element < space.mesh.n_elements:
        raise InvalidElementError(func=local_poly, reason=element)

    dofs = space._check(dofs)
    table = space.tables[element]
    moments = dofs.reshape(space.mesh.n_elements, -1)[space.tables.members[element]].ravel()

    return LocalPoly(element, table.reconstruct(moments))


def _locate(space: RdgSpace, points: FloatArray, side: TraceSide) -> tuple[FloatArray, Any, FloatArray]:
    points = np.asarray(points, dtype=np.float64)
    flat = points.reshape(-1, space.mesh.dim)

    elements = space.mesh.locate(flat, side)

    return flat, elements, space.mesh.to_reference(flat, elements)


def eval_solution(
    space: RdgSpace, dofs: FloatArray, points: FloatArray, side: TraceSide = TraceSide.PLUS
) -> FloatArray:
    """
    Values of the discrete solution.

    :param space:       Space.
    :param dofs:        DoF vector.
    :param points:      Points of shape (..., d); 1D points may also be given as a flat array.
    :param side:        Element picked on interfaces: PLUS the one on the positive side.

    :return:            Values with one entry per point.

    :raises PointOutsideDomainError:    Some point lies outside the mesh.
    """

    flat, elements, reference = _locate(space, points, side)
    coeffs = space.local_coefficients(dofs)[elements]

    return np.einsum('nb,bn->n', coeffs, space.basis.evaluate(reference))


def eval_gradient(
    space: RdgSpace, dofs: FloatArray, points: FloatArray, side: TraceSide = TraceSide.PLUS
) -> FloatArray:
    """Gradient of the discrete solution, shape (n_points, d)."""

    flat, elements, reference = _locate(space, points, side)
    coeffs = space.local_coefficients(dofs)[elements]

    grads = np.einsum('nb,gbn->ng', coeffs, space.basis.evaluate_gradient(reference))

    return grads * 2.0 / space.mesh.element_sizes[elements]


def mass_matrix(space: RdgSpace) -> SparseOperator:
    """Gram matrix of the reduced basis, ``R^T M_dg R`` with the diagonal broken Legendre mass ``M_dg``."""

    r = space.reconstruction

    return as_operator(r.T @ scipy.sparse.diags(space.dg_mass) @ r)


class L2Errors(NamedTuple):
    error_u: float
    error_q: FloatArray | None = None

    @property
    def error_q_total(self) -> float | None:
        return None if self.error_q is None else float(np.sqrt(np.sum(self.error_q ** 2)))


def l2_error(
    space: RdgSpace, dofs: FloatArray, exact: SpaceFunction, rule: QuadratureRule | None = None,
    gradient: SpaceFunction | None = None, q_dofs: Sequence[FloatArray] | None = None, eps: float = 1.0
) -> L2Errors:
    """
    Broken L2 errors of the solution and, when `gradient` is given, of its gradient.

    :param space:       Space.
    :param dofs:        DoF vector of the solution.
    :param exact:       Exact solution of points (..., d).
    :param rule:        1D quadrature to tensorize, default k + 2 points.
    :param gradient:    Exact gradient returning (..., d).
    :param q_dofs:      Auxiliary variable DoFs per direction. When given, ``q_i / sqrt(eps)`` is compared
                        against the exact gradient; otherwise the broken gradient of the solution is.
    :param eps:         Diffusion coefficient the auxiliary variable is scaled with.
    """

    basis = TensorBasis(space.order.poly_indices, rule or default_rule(space.order.k))
    coeffs = space.local_coefficients(dofs)

    error_u = broken_l2_distance(space.mesh, basis, coeffs, exact)

    if gradient is None:
        return L2Errors(error_u)

    if q_dofs is None:
        return L2Errors(error_u, broken_gradient_distance(space.mesh, basis, coeffs, gradient))

    scale = 1.0 / np.sqrt(eps)
    error_q = np.array([
        broken_l2_distance(
            space.mesh, basis, space.local_coefficients(q) * scale,
            lambda x, i=i: np.asarray(gradient(x))[..., i]  # type: ignore[misc]
        )
        for i, q in enumerate(q_dofs)
    ])

    return L2Errors(error_u, error_q)


class SolutionDump(NamedTuple):
    mesh: TensorMesh
    order: OrderPair
    dofs: FloatArray
    coefficients: FloatArray
    metadata: dict[str, str]

    def evaluate(self, points: FloatArray) -> FloatArray:
        """Values of the dumped solution at points of shape (..., d)."""

        points = np.asarray(points, dtype=np.float64)
        flat = points.reshape(-1, self.mesh.dim)

        elements = self.mesh.locate(flat)
        basis = TensorBasis(self.order.poly_indices, default_rule(self.order.k))
        values = np.einsum(
            'nb,bn->n', self.coefficients[elements], basis.evaluate(self.mesh.to_reference(flat, elements))
        )

        return values.reshape(points.shape[:-1])


def write_dump(
    space: RdgSpace, dofs: FloatArray, path: str | PathLike[str], **metadata: Any
) -> Path:
    """
    Write the element Legendre coefficients as ``elem_index,alpha_index,coefficient`` rows.

    Mesh metadata and any extra `metadata` go into leading ``#`` lines.
    """

    path = Path(path)
    coeffs = space.local_coefficients(dofs)
    mesh = space.mesh

    lines = [
        f'# order {space.order.k} {space.order.m} {space.order.d}',
        '# periodic ' + ' '.join(str(int(p)) for p in mesh.periodic),
        *(f'# breakpoints {" ".join(repr(float(x)) for x in bp)}' for bp in mesh.breakpoints),
        *(f'# {key} {value}' for key, value in metadata.items()),
        DUMP_COLUMNS
    ]

    n, nk = coeffs.shape
    elements, alphas = np.divmod(np.arange(n * nk), nk)

    path.parent.mkdir(parents=True, exist_ok=True)

    with path.open('w', encoding='utf-8') as f:
        f.write('\n'.join(lines) + '\n')
        np.savetxt(f, np.column_stack([elements, alphas, coeffs.ravel()]), fmt=('%d', '%d', '%.17g'), delimiter=',')

    logger.debug('wrote %d coefficients to %s', n * nk, path)

    return path


def read_dump(path: str | PathLike[str]) -> SolutionDump:
    """
    Read a file written by `write_dump`.

    The DoFs are recovered from the owner rows of the reconstruction, which reproduce the moments exactly.
    """

    path = Path(path)
    order: OrderPair | None = None
    periodic: list[bool] = []
    breakpoints: list[FloatArray] = []
    metadata: dict[str, str] = {}
    rows: list[str] = []

    with path.open('r', encoding='utf-8') as f:
        for line in f:
            line = line.strip()

            if not line or line == DUMP_COLUMNS:
                continue

            if not line.startswith('#'):
                rows.append(line)
                continue

            key, _, value = line[1:].strip().partition(' ')

            if key == 'order':
                order = OrderPair(*(int(v) for v in value.split()))
            elif key == 'periodic':
                periodic = [bool(int(v)) for v in value.split()]
            elif key == 'breakpoints':
                breakpoints.append(np.array([float(v) for v in value.split()]))
            else:
                metadata[key] = value

    if order is None or not breakpoints:
        raise RdgValueError('Not a solution dump, missing order or mesh header!', read_dump, str(path))

    mesh = build_mesh(order.d, breakpoints, periodic)
    table = np.loadtxt(rows, delimiter=',', ndmin=2)

    coefficients = np.zeros((mesh.n_elements, order.n_coeffs))
    coefficients[table[:, 0].astype(np.int64), table[:, 1].astype(np.int64)] = table[:, 2]

    dofs = coefficients[:, order.moment_indices.embed(order.poly_indices)].ravel()

    return SolutionDump(mesh, order, dofs, coefficients, metadata)


def sample_grid(space: RdgSpace, dofs: FloatArray, per_element: int = 4) -> tuple[FloatArray, FloatArray]:
    """
    Evaluate the solution on `per_element` uniformly spaced interior points per element and direction.

    :return:    Points (n, d) and values (n,).
    """

    ticks = (2.0 * np.arange(per_element) + 1.0) / per_element - 1.0
    grids = np.meshgrid(*[ticks] * space.mesh.dim, indexing='ij')
    reference = np.stack([g.ravel(order='F') for g in grids], axis=-1)

    points = space.mesh.to_physical(reference)
    coeffs = space.local_coefficients(dofs)
    values = coeffs @ space.basis.evaluate(reference)

    return points.reshape(-1, space.mesh.dim), values.ravel()


def write_samples(path: str | PathLike[str], points: FloatArray, values: FloatArray) -> Path:
    """Long-format plot data: one ``x[,y],value`` row per sample point."""

    path = Path(path)
    dim = points.shape[-1]
    header = ','.join(['x', 'y'][:dim] + ['value'])

    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.column_stack([points, values]), fmt='%.17g', delimiter=',', header=header, comments='')

    return path
