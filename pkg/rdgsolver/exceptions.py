from __future__ import annotations

from typing import Any, Callable

__all__ = [
    'RdgError', 'RdgValueError', 'RdgRuntimeError', 'RdgIndexError',

    'UnsupportedDimensionError', 'NonMonotoneBreakpointsError', 'TooFewElementsError', 'InvalidElementError',
    'PointOutsideDomainError',

    'NoConvergenceError', 'UnsupportedOrderError',

    'SingularMatrixError', 'ExactSingularError', 'SingularFactorError', 'NotConvergedError',
    'LinearSolveFailureError',

    'OrderConditionViolationError', 'NonFiniteStateError',

    'UnknownProblemError', 'NeedTwoMeshesError', 'ConfigError'
]


class RdgError(Exception):
    """Base of every error raised by rdgsolver."""

    def __init__(
        self, message: str | None = None, func: Callable[..., Any] | str | None = None, reason: Any = None
    ) -> None:
        self.message = message or self.__class__.__doc__ or ''
        self.func = func
        self.reason = reason

        super().__init__(self._format())

    def _format(self) -> str:
        out = self.message

        if self.func is not None:
            name = self.func if isinstance(self.func, str) else getattr(self.func, '__qualname__', repr(self.func))
            out = f'({name}) {out}'

        if self.reason is not None:
            out = f'{out} ({self.reason})'

        return out


class RdgValueError(RdgError, ValueError):
    """Invalid value passed."""


class RdgRuntimeError(RdgError, RuntimeError):
    """Something failed while computing."""


class RdgIndexError(RdgError, IndexError):
    """Index out of range."""


class UnsupportedDimensionError(RdgValueError):
    """Only one and two dimensional meshes are supported, with one entry per direction."""


class NonMonotoneBreakpointsError(RdgValueError):
    """Breakpoints must be strictly increasing."""


class TooFewElementsError(RdgValueError):
    """At least three elements per direction are required to build a stencil."""


class InvalidElementError(RdgIndexError):
    """Element index outside of the mesh."""


class PointOutsideDomainError(RdgValueError):
    """Point lies outside of the computational domain."""


class NoConvergenceError(RdgRuntimeError):
    """Gauss-Legendre node computation did not converge."""


class UnsupportedOrderError(RdgValueError):
    """Only the well-posed order pairs (k, m) = (2, 0) and (5, 1) are supported."""


class SingularMatrixError(RdgRuntimeError):
    """Reconstruction moment matrix is singular or too ill-conditioned."""


class ExactSingularError(RdgRuntimeError):
    """Zero pivot encountered during dense LU factorization."""


class SingularFactorError(RdgRuntimeError):
    """Sparse factorization is exactly singular."""


class NotConvergedError(RdgRuntimeError):
    """Iterative solver hit its iteration cap before reaching the tolerance."""


class LinearSolveFailureError(RdgRuntimeError):
    """A linear solve inside the semi-discrete operator or a time stage failed."""


class OrderConditionViolationError(RdgRuntimeError):
    """IMEX tableau does not satisfy its order conditions."""


class NonFiniteStateError(RdgRuntimeError):
    """NaN or Inf detected in the discrete state."""

    def __init__(
        self, message: str | None = None, func: Callable[..., Any] | str | None = None, reason: Any = None,
        log: list[Any] | None = None
    ) -> None:
        self.log = list(log or [])

        super().__init__(message, func, reason)


class UnknownProblemError(RdgValueError):
    """No test problem with this name in the catalog."""


class NeedTwoMeshesError(RdgValueError):
    """A convergence study needs at least two mesh sizes."""


class ConfigError(RdgValueError):
    """Invalid run configuration."""
