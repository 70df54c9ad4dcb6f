from __future__ import annotations

from enum import IntEnum, StrEnum
from typing import Any, Callable, NamedTuple

import numpy as np
from numpy.typing import NDArray

__all__ = [
    'FloatArray', 'IntArray',

    'SpaceFunction', 'SpaceTimeFunction',

    'StencilKind',

    'BoundaryKind', 'BoundaryCondition',

    'TraceSide',

    'SolverMethod',

    'ConvectiveFlux'
]

FloatArray = NDArray[np.float64]
IntArray = NDArray[np.int64]

SpaceFunction = Callable[[FloatArray], FloatArray]
"""Vectorized function of points with shape (..., d)."""

SpaceTimeFunction = Callable[[FloatArray, float], FloatArray]
"""Vectorized function of points with shape (..., d) and a time."""


class StencilKind(IntEnum):
    """Placement of a one-dimensional three-element stencil relative to its owner."""

    CENTER = 0
    """Owner plus its left and right neighbors."""

    BACKWARD = 1
    """Owner plus the two elements to its left. Used at the last element of a non-periodic direction."""

    FORWARD = 2
    """Owner plus the two elements to its right. Used at the first element of a non-periodic direction."""

    @property
    def member_shifts(self) -> tuple[int, int, int]:
        """Index offsets of the stencil members relative to the owner, left to right."""
        return ((-1, 0, 1), (-2, -1, 0), (0, 1, 2))[self.value]  # type: ignore[return-value]


class BoundaryKind(IntEnum):
    PERIODIC = 0
    """Wrap-around neighbors, no boundary faces."""

    DIRICHLET = 1
    """Prescribed boundary values on both ends of the direction."""

    def __call__(self, data: SpaceTimeFunction | None = None, /) -> BoundaryCondition:
        if self is BoundaryKind.DIRICHLET and data is None:
            raise TypeError('Dirichlet boundaries need a data function g(x, t)!')

        return BoundaryCondition(self, data if self is BoundaryKind.DIRICHLET else None)

    @property
    def is_periodic(self) -> bool:
        return self is BoundaryKind.PERIODIC


class BoundaryCondition(NamedTuple):
    kind: BoundaryKind
    data: SpaceTimeFunction | None = None


class TraceSide(IntEnum):
    """Which one-sided trace to take on an element interface."""

    MINUS = -1
    """Trace from the element on the negative side of the coordinate axis."""

    PLUS = 1
    """Trace from the element on the positive side of the coordinate axis."""


class SolverMethod(StrEnum):
    AUTO = 'auto'
    """Direct factorization up to `DIRECT_LIMIT` unknowns, Krylov above or when the factorization fails."""

    DIRECT = 'direct'
    """Sparse LU (SuperLU)."""

    ITERATIVE = 'iterative'
    """GMRES preconditioned by an incomplete LU factorization."""

    @classmethod
    def from_param(cls, value: Any) -> SolverMethod:
        if isinstance(value, cls):
            return value

        return cls(str(value).lower())

    def resolve(self, size: int) -> SolverMethod:
        if self is not SolverMethod.AUTO:
            return self

        return SolverMethod.DIRECT if size <= DIRECT_LIMIT else SolverMethod.ITERATIVE


DIRECT_LIMIT = 100_000


class ConvectiveFlux(IntEnum):
    """Built-in convective nonlinearities f(u)."""

    LINEAR = 0
    """f(u) = u, linear advection."""

    BURGERS = 1
    """f(u) = u^2 / 2."""

    def __call__(self, u: FloatArray) -> FloatArray:
        u = np.asarray(u, dtype=np.float64)

        if self is ConvectiveFlux.LINEAR:
            return u

        return 0.5 * u ** 2

    def derivative(self, u: FloatArray) -> FloatArray:
        u = np.asarray(u, dtype=np.float64)

        if self is ConvectiveFlux.LINEAR:
            return np.ones_like(u)

        return u
