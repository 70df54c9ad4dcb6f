from __future__ import annotations

from dataclasses import dataclass
from functools import cache, cached_property
from itertools import product
from typing import Callable, Iterator, Literal, Sequence, overload

import numpy as np
from numpy.polynomial.legendre import leggauss

from .exceptions import NoConvergenceError, RdgValueError
from .mesh import TensorMesh
from .types import FloatArray, IntArray, SpaceFunction

__all__ = [
    'MultiIndex', 'IndexSet', 'index_set',

    'legendre_eval', 'legendre_eval_all',

    'QuadratureRule', 'gauss_rule', 'default_rule',

    'TensorBasis',

    'scaled_basis_eval', 'moment', 'element_moments',

    'broken_l2_distance', 'broken_gradient_distance'
]

MultiIndex = tuple[int, ...]


@overload
def legendre_eval_all(k: int, x: FloatArray | float, derivative: Literal[False] = False) -> FloatArray:
    ...


@overload
def legendre_eval_all(k: int, x: FloatArray | float, derivative: Literal[True]) -> tuple[FloatArray, FloatArray]:
    ...


def legendre_eval_all(
    k: int, x: FloatArray | float, derivative: bool = False
) -> FloatArray | tuple[FloatArray, FloatArray]:
    """
    Legendre polynomials of orders 0..k by the three-term recurrence.

    :param k:           Highest order.
    :param x:           Evaluation points, any shape.
    :param derivative:  Also return the first derivatives.

    :return:            Array of shape (k + 1, *x.shape), plus the derivatives if asked.
    """

    x = np.asarray(x, dtype=np.float64)

    values = np.empty((k + 1, *x.shape))
    values[0] = 1.0

    if k >= 1:
        values[1] = x

    for n in range(1, k):
        values[n + 1] = ((2 * n + 1) * x * values[n] - n * values[n - 1]) / (n + 1)

    if not derivative:
        return values

    derivs = np.zeros_like(values)

    if k >= 1:
        derivs[1] = 1.0

    # P'_{n+1} = P'_{n-1} + (2n + 1) P_n, valid up to the endpoints
    for n in range(1, k):
        derivs[n + 1] = derivs[n - 1] + (2 * n + 1) * values[n]

    return values, derivs


def legendre_eval(k: int, x: FloatArray | float) -> FloatArray:
    """Legendre polynomial of order k, normalized to 1 at x = 1."""
    return legendre_eval_all(k, x)[k]


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Legendre rule on the reference interval [-1, 1]."""

    nodes: FloatArray
    weights: FloatArray

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def degree(self) -> int:
        """Highest polynomial degree integrated exactly."""
        return 2 * self.n - 1

    def integrate(self, f: Callable[[FloatArray], FloatArray]) -> float:
        return float(np.dot(self.weights, f(self.nodes)))

    def tensor(self, dim: int) -> tuple[FloatArray, FloatArray]:
        """Tensor-product points, shape (n^dim, dim), direction 1 fastest, and their weights."""

        if dim == 0:
            return np.zeros((1, 0)), np.ones(1)

        grids = np.meshgrid(*[self.nodes] * dim, indexing='ij')
        wgrids = np.meshgrid(*[self.weights] * dim, indexing='ij')

        points = np.stack([g.ravel(order='F') for g in grids], axis=-1)
        weights = np.prod(np.stack([w.ravel(order='F') for w in wgrids], axis=-1), axis=-1)

        return points, weights


@cache
def gauss_rule(n: int) -> QuadratureRule:
    """
    n-point Gauss-Legendre rule.

    :raises NoConvergenceError:     The computed nodes or weights are not a valid rule.
    """

    if n < 1:
        raise RdgValueError('Gauss rule needs at least one point!', gauss_rule, n)

    nodes, weights = leggauss(n)

    # symmetrize away the round-off of the eigenvalue solver
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])

    if not (np.all(np.isfinite(nodes)) and np.all(weights > 0.0) and abs(weights.sum() - 2.0) < 1e-12):
        raise NoConvergenceError(func=gauss_rule, reason=n)

    nodes.setflags(write=False)
    weights.setflags(write=False)

    return QuadratureRule(nodes, weights)


def default_rule(k: int) -> QuadratureRule:
    """k + 2 points: exact for the mass, stiffness and moment integrals of order-k spaces."""
    return gauss_rule(k + 2)


@dataclass(frozen=True)
class IndexSet:
    """
    The multi-indices ``0 <= alpha_i <= order`` sorted by ascending trace, ties broken lexicographically.
    """

    order: int
    dim: int
    alphas: IntArray

    def __len__(self) -> int:
        return len(self.alphas)

    def __iter__(self) -> Iterator[MultiIndex]:
        return (tuple(int(a) for a in alpha) for alpha in self.alphas)

    def __getitem__(self, i: int) -> MultiIndex:
        return tuple(int(a) for a in self.alphas[i])

    @property
    def traces(self) -> IntArray:
        return self.alphas.sum(axis=-1)

    def position(self, alpha: Sequence[int]) -> int:
        return self._positions[tuple(int(a) for a in alpha)]

    @cached_property
    def _positions(self) -> dict[MultiIndex, int]:
        return {alpha: i for i, alpha in enumerate(self)}

    def embed(self, other: IndexSet) -> IntArray:
        """Positions of this set's indices inside a larger set of the same dimension."""
        return np.array([other.position(alpha) for alpha in self], dtype=np.int64)

    @property
    def moment_scale(self) -> FloatArray:
        """Reference moment factor ``prod_i (2 alpha_i + 1) / 2`` per index."""
        return np.prod((2 * self.alphas + 1) / 2.0, axis=-1)


@cache
def index_set(order: int, dim: int) -> IndexSet:
    alphas = sorted(product(range(order + 1), repeat=dim), key=lambda a: (sum(a), a))
    array = np.array(alphas, dtype=np.int64).reshape(-1, dim)
    array.setflags(write=False)

    return IndexSet(order, dim, array)


@dataclass(frozen=True, eq=False)
class TensorBasis:
    """
    Tensor Legendre basis of an index set tabulated at the reference quadrature and face points.
    """

    indices: IndexSet
    rule: QuadratureRule

    @property
    def dim(self) -> int:
        return self.indices.dim

    def __len__(self) -> int:
        return len(self.indices)

    def evaluate(self, reference: FloatArray) -> FloatArray:
        """Basis values at reference points of shape (n, dim), returned as (n_basis, n)."""

        reference = np.asarray(reference, dtype=np.float64).reshape(-1, self.dim)
        table = legendre_eval_all(self.indices.order, reference)

        out = np.ones((len(self.indices), reference.shape[0]))

        for i in range(self.dim):
            out *= table[self.indices.alphas[:, i], :, i]

        return out

    def evaluate_gradient(self, reference: FloatArray) -> FloatArray:
        """Reference-coordinate gradients, shape (dim, n_basis, n)."""

        reference = np.asarray(reference, dtype=np.float64).reshape(-1, self.dim)
        table, dtable = legendre_eval_all(self.indices.order, reference, derivative=True)

        out = np.ones((self.dim, len(self.indices), reference.shape[0]))

        for g in range(self.dim):
            for i in range(self.dim):
                out[g] *= (dtable if g == i else table)[self.indices.alphas[:, i], :, i]

        return out

    @cached_property
    def points(self) -> tuple[FloatArray, FloatArray]:
        """Volume quadrature points (n_q, dim) and weights (n_q,) on the reference cell."""
        return self.rule.tensor(self.dim)

    @cached_property
    def values(self) -> FloatArray:
        return self.evaluate(self.points[0])

    @cached_property
    def gradients(self) -> FloatArray:
        return self.evaluate_gradient(self.points[0])

    @cached_property
    def _faces(self) -> dict[tuple[int, int], tuple[FloatArray, FloatArray, FloatArray]]:
        transverse, weights = self.rule.tensor(self.dim - 1)
        faces = {}

        for direction, side in product(range(self.dim), (-1, 1)):
            points = np.insert(transverse, direction, float(side), axis=1)
            faces[direction, side] = (points, weights, self.evaluate(points))

        return faces

    def face_points(self, direction: int, side: int) -> tuple[FloatArray, FloatArray]:
        """
        Reference points on the face ``x_direction = side`` (side is -1 or +1) and their face weights.
        """

        points, weights, _ = self._faces[direction, side]

        return points, weights

    def face_values(self, direction: int, side: int) -> FloatArray:
        return self._faces[direction, side][2]


def scaled_basis_eval(mesh: TensorMesh, element: int, alpha: Sequence[int], x: FloatArray) -> FloatArray:
    """
    Product of scaled one-dimensional Legendre polynomials of element `element` at physical points `x`.
    """

    x = np.asarray(x, dtype=np.float64).reshape(-1, mesh.dim)
    reference = 2.0 * (x - mesh.element_centers[element]) / mesh.element_sizes[element]

    out = np.ones(reference.shape[0])

    for i, a in enumerate(alpha):
        out *= legendre_eval(int(a), reference[:, i])

    return out


def element_moments(
    mesh: TensorMesh, indices: IndexSet, f: SpaceFunction, rule: QuadratureRule | None = None
) -> FloatArray:
    """
    Legendre moments of `f` on every element.

    :param mesh:        Mesh.
    :param indices:     Moment orders.
    :param f:           Vectorized function of points (..., dim).
    :param rule:        1D rule to tensorize, default `default_rule(indices.order)`.

    :return:            Moments, shape (n_elements, len(indices)).
    """

    basis = TensorBasis(indices, rule or default_rule(indices.order))
    reference, weights = basis.points

    values = np.asarray(f(mesh.to_physical(reference)), dtype=np.float64)
    values = np.broadcast_to(values, (mesh.n_elements, len(weights)))

    return (values * weights) @ basis.values.T * indices.moment_scale


def moment(
    mesh: TensorMesh, element: int, alpha: Sequence[int], f: SpaceFunction, rule: QuadratureRule | None = None
) -> float:
    """Legendre moment of order `alpha` of `f` on a single element."""

    alpha = tuple(int(a) for a in alpha)
    rule = rule or default_rule(max(alpha))

    reference, weights = rule.tensor(mesh.dim)
    physical = mesh.element_centers[element] + 0.5 * mesh.element_sizes[element] * reference

    integrand = np.asarray(f(physical), dtype=np.float64) * scaled_basis_eval(mesh, element, alpha, physical)
    scale = np.prod([(2 * a + 1) / 2.0 for a in alpha])

    return float(scale * np.dot(weights, np.broadcast_to(integrand, weights.shape)))


def _quadrature_setup(mesh: TensorMesh, basis: TensorBasis) -> tuple[FloatArray, FloatArray]:
    reference, weights = basis.points

    physical = mesh.to_physical(reference)
    jacobians = mesh.element_volumes / 2.0 ** mesh.dim

    return physical, jacobians[:, None] * weights[None, :]


def broken_l2_distance(mesh: TensorMesh, basis: TensorBasis, coeffs: FloatArray, exact: SpaceFunction) -> float:
    """
    ``sqrt(sum_K int_K (u_h - u)^2)`` for element-wise Legendre coefficients of shape (n_elements, n_basis).
    """

    physical, weights = _quadrature_setup(mesh, basis)

    diff = coeffs @ basis.values - np.broadcast_to(exact(physical), weights.shape)

    return float(np.sqrt(np.sum(weights * diff ** 2)))


def broken_gradient_distance(
    mesh: TensorMesh, basis: TensorBasis, coeffs: FloatArray, exact_gradient: SpaceFunction
) -> FloatArray:
    """Per-direction L2 distance between the broken gradient of the coefficients and `exact_gradient`."""

    physical, weights = _quadrature_setup(mesh, basis)
    exact = np.asarray(exact_gradient(physical), dtype=np.float64)

    out = np.empty(mesh.dim)

    for i in range(mesh.dim):
        grad = (coeffs @ basis.gradients[i]) * (2.0 / mesh.element_sizes[:, i])[:, None]
        out[i] = np.sqrt(np.sum(weights * (grad - exact[..., i]) ** 2))

    return out
