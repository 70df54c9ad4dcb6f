from __future__ import annotations

from abc import ABC, abstractmethod

from .types import FloatArray

__all__ = [
    'SplitSystem'
]


class SplitSystem(ABC):
    """
    Semi-discrete system ``u' = F_E(t, u) + F_I(t, u)`` advanced by an implicit-explicit integrator.

    The implicit part must be affine in `u` so every implicit stage is one linear solve.
    """

    @property
    @abstractmethod
    def size(self) -> int:
        ...

    @abstractmethod
    def explicit(self, t: float, u: FloatArray) -> FloatArray:
        """Explicitly treated part F_E."""

    @abstractmethod
    def implicit(self, t: float, u: FloatArray) -> FloatArray:
        """Implicitly treated part F_I."""

    @abstractmethod
    def solve_implicit(self, t: float, coefficient: float, rhs: FloatArray) -> FloatArray:
        """
        Solve ``u - coefficient * F_I(t, u) = rhs`` for `u`.

        :param t:               Stage time the implicit part is evaluated at.
        :param coefficient:     Diagonal tableau entry times the step size.
        :param rhs:             Known part of the stage equation.
        """

    @property
    def has_implicit(self) -> bool:
        return True
