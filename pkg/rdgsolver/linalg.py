from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .exceptions import ExactSingularError, NotConvergedError, RdgValueError, SingularFactorError
from .types import FloatArray, IntArray, SolverMethod

__all__ = [
    'LUFactorization', 'lu_factor',

    'SparseOperator', 'as_operator',

    'SparseSolver', 'sparse_solve'
]

logger = logging.getLogger(__name__)

SparseOperator = scipy.sparse.csr_matrix


@dataclass(frozen=True)
class LUFactorization:
    """Dense LU factorization with partial pivoting, PA = LU."""

    matrix: FloatArray
    lu: FloatArray
    piv: IntArray
    determinant: float
    condition: float

    @property
    def lower(self) -> FloatArray:
        return np.tril(self.lu, -1) + np.eye(self.lu.shape[0])

    @property
    def upper(self) -> FloatArray:
        return np.triu(self.lu)

    @property
    def permutation(self) -> FloatArray:
        """Row permutation matrix P with P @ A = L @ U."""
        n = self.lu.shape[0]
        order = np.arange(n)

        # LAPACK pivots are sequential row swaps
        for i, p in enumerate(self.piv):
            order[[i, p]] = order[[p, i]]

        return np.eye(n)[order]

    def solve(self, rhs: FloatArray) -> FloatArray:
        return scipy.linalg.lu_solve((self.lu, self.piv), rhs)

    def inverse(self) -> FloatArray:
        return self.solve(np.eye(self.lu.shape[0]))


def lu_factor(matrix: FloatArray) -> LUFactorization:
    """
    Factorize a small dense square matrix.

    :param matrix:      Square matrix.

    :return:            Factors, pivots, determinant and 1-norm condition number.

    :raises ExactSingularError:     A pivot is exactly zero.
    """

    matrix = np.asarray(matrix, dtype=np.float64)

    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise RdgValueError('Matrix must be square!', lu_factor, matrix.shape)

    with warnings.catch_warnings():
        warnings.simplefilter('ignore', scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(matrix, check_finite=True)

    diag = np.diag(lu)

    if np.any(diag == 0.0):
        raise ExactSingularError(func=lu_factor, reason=f'zero pivot at {int(np.argmin(np.abs(diag)))}')

    sign = -1.0 if np.count_nonzero(piv != np.arange(piv.size)) % 2 else 1.0

    determinant = sign * float(np.prod(diag))
    inverse = scipy.linalg.lu_solve((lu, piv), np.eye(len(diag)))
    condition = float(np.linalg.norm(matrix, 1) * np.linalg.norm(inverse, 1))

    return LUFactorization(matrix, lu, piv.astype(np.int64), determinant, condition)


def as_operator(matrix: Any, shape: tuple[int, int] | None = None) -> SparseOperator:
    """Convert to CSR with sorted, deduplicated column indices. `shape` is needed for triplet input."""

    operator = scipy.sparse.csr_matrix(matrix, shape=shape, dtype=np.float64)
    operator.sum_duplicates()
    operator.sort_indices()

    return operator


@dataclass
class SparseSolver:
    """
    Reusable solver for one sparse operator.

    The factorization (or the incomplete factorization used as preconditioner) is computed once
    on construction and reused by every `solve` call.
    """

    operator: SparseOperator
    method: SolverMethod = SolverMethod.AUTO
    tol: float = 1e-10
    maxiter: int = 2000

    _lu: Any = field(init=False, repr=False, default=None)
    _precond: Any = field(init=False, repr=False, default=None)

    def __post_init__(self) -> None:
        requested = SolverMethod.from_param(self.method)
        self.method = requested.resolve(self.operator.shape[0])

        if self.tol <= 0.0:
            raise RdgValueError('Tolerance must be positive!', self.__class__, self.tol)

        csc = scipy.sparse.csc_matrix(self.operator)

        if self.method is SolverMethod.DIRECT:
            try:
                self._lu = scipy.sparse.linalg.splu(csc)
            except RuntimeError as e:
                if requested is not SolverMethod.AUTO:
                    raise SingularFactorError(func=self.__class__, reason=str(e)) from e

                logger.warning('sparse LU of size %d failed (%s), falling back to GMRES', csc.shape[0], e)
                self.method = SolverMethod.ITERATIVE

        if self.method is SolverMethod.ITERATIVE:
            try:
                ilu = scipy.sparse.linalg.spilu(csc, drop_tol=1e-6, fill_factor=20)
            except RuntimeError as e:
                raise SingularFactorError(func=self.__class__, reason=str(e)) from e

            self._precond = scipy.sparse.linalg.LinearOperator(csc.shape, ilu.solve)

        logger.debug('factorized %s operator of size %d, nnz=%d', self.method, csc.shape[0], csc.nnz)

    def solve(self, rhs: FloatArray) -> FloatArray:
        rhs = np.asarray(rhs, dtype=np.float64)

        if rhs.shape[0] != self.operator.shape[0]:
            raise RdgValueError('Right-hand side has the wrong size!', self.solve, rhs.shape)

        if self._lu is not None:
            return np.asarray(self._lu.solve(rhs))

        if rhs.ndim > 1:
            return np.stack([self.solve(col) for col in rhs.T], axis=1)

        if not np.any(rhs):
            return np.zeros_like(rhs)

        solution, info = scipy.sparse.linalg.gmres(
            self.operator, rhs, rtol=self.tol, atol=0.0, restart=100, maxiter=self.maxiter, M=self._precond
        )

        if info != 0:
            raise NotConvergedError(func=self.solve, reason=f'gmres info={info}')

        return np.asarray(solution)


def sparse_solve(
    operator: Any, rhs: FloatArray, method: SolverMethod | str = SolverMethod.AUTO, tol: float = 1e-10
) -> FloatArray:
    """
    One-shot sparse solve.

    :param operator:    Square sparse (or dense) matrix.
    :param rhs:         Right-hand side, one or more columns.
    :param method:      Direct, iterative, or automatic choice by size.
    :param tol:         Relative residual target of the iterative method.

    :return:            Solution with the shape of `rhs`.
    """

    return SparseSolver(as_operator(operator), SolverMethod.from_param(method), tol).solve(rhs)
