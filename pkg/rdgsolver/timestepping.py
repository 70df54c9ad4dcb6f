from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from .abstract import SplitSystem
from .exceptions import (
    LinearSolveFailureError, NonFiniteStateError, OrderConditionViolationError, RdgError, RdgValueError
)
from .linalg import SparseOperator, SparseSolver
from .types import FloatArray, SolverMethod

__all__ = [
    'GAMMA', 'ALPHA1',

    'ImexTableau', 'build_tableau',

    'StageSolver',

    'imex_step',

    'StepRecord', 'AdvanceResult', 'advance', 'cfl_step'
]

logger = logging.getLogger(__name__)

GAMMA = 0.435866521508459
"""Diagonal entry of the implicit tableau."""

ALPHA1 = -0.35


@dataclass(frozen=True, eq=False)
class ImexTableau:
    """
    Paired Butcher tableaux of a three-stage IMEX Runge-Kutta scheme with a leading explicit stage.

    Both tableaux share the weights and the abscissae.
    """

    gamma: float
    alpha1: float
    alpha2: float
    beta1: float
    beta2: float

    a: FloatArray
    a_hat: FloatArray
    b: FloatArray
    b_hat: FloatArray
    c: FloatArray

    @property
    def stages(self) -> int:
        return len(self.c)

    def order_conditions(self) -> dict[str, float]:
        """Absolute residual of every condition up to third order."""

        a, a_hat, b, b_hat, c = self.a, self.a_hat, self.b, self.b_hat, self.c

        return {
            'sum(b)': abs(b.sum() - 1.0),
            'sum(b_hat)': abs(b_hat.sum() - 1.0),
            'b.c': abs(b @ c - 0.5),
            'b_hat.c': abs(b_hat @ c - 0.5),
            'b.c^2': abs(b @ c ** 2 - 1.0 / 3.0),
            'b_hat.c^2': abs(b_hat @ c ** 2 - 1.0 / 3.0),
            'b.Ac': abs(b @ a @ c - 1.0 / 6.0),
            'b.A_hat c': abs(b @ a_hat @ c - 1.0 / 6.0),
            'b_hat.A_hat c': abs(b_hat @ a_hat @ c - 1.0 / 6.0),
            'b_hat.A c': abs(b_hat @ a @ c - 1.0 / 6.0),
            'rows(A)': float(np.abs(a.sum(axis=1) - c).max()),
            'rows(A_hat)': float(np.abs(a_hat.sum(axis=1) - c).max()),
        }


def build_tableau(
    gamma: float = GAMMA, alpha1: float = ALPHA1, beta2: float | None = None, tol: float = 1e-12
) -> ImexTableau:
    """
    Build the third-order IMEX tableau and check its order conditions.

    :param gamma:       Diagonal of the implicit part.
    :param alpha1:      Free coupling parameter of the explicit part.
    :param beta2:       Override of the third weight, default ``1.5 gamma^2 - 5 gamma + 1.25``.
    :param tol:         Accepted residual of every order condition.

    :raises OrderConditionViolationError:   Some condition is violated by more than `tol`.
    """

    beta1 = -1.5 * gamma ** 2 + 4.0 * gamma - 0.25

    if beta2 is None:
        beta2 = 1.5 * gamma ** 2 - 5.0 * gamma + 1.25

    alpha2 = (1.0 / 3.0 - 2.0 * gamma ** 2 - 2.0 * beta2 * alpha1 * gamma) / (gamma * (1.0 - gamma))

    a = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, gamma, 0.0, 0.0],
        [0.0, (1.0 - gamma) / 2.0, gamma, 0.0],
        [0.0, beta1, beta2, gamma]
    ])

    a_hat = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [gamma, 0.0, 0.0, 0.0],
        [(1.0 + gamma) / 2.0 - alpha1, alpha1, 0.0, 0.0],
        [0.0, 1.0 - alpha2, alpha2, 0.0]
    ])

    b = np.array([0.0, beta1, beta2, gamma])
    c = np.array([0.0, gamma, (1.0 + gamma) / 2.0, 1.0])

    for array in (a, a_hat, b, c):
        array.setflags(write=False)

    tableau = ImexTableau(gamma, alpha1, alpha2, beta1, beta2, a, a_hat, b, b, c)

    violated = {name: value for name, value in tableau.order_conditions().items() if not value <= tol}

    if violated:
        raise OrderConditionViolationError(
            func=build_tableau, reason=', '.join(f'{name}: {value:.3e}' for name, value in violated.items())
        )

    return tableau


@dataclass
class StageSolver:
    """Factorized stage matrix for one value of the diagonal coefficient ``gamma * dt``."""

    coefficient: float
    matrix: SparseOperator
    method: SolverMethod = SolverMethod.AUTO
    tol: float = 1e-10

    _solver: SparseSolver = field(init=False, repr=False)

    def __post_init__(self) -> None:
        try:
            self._solver = SparseSolver(self.matrix, self.method, self.tol)
        except RdgError as e:
            raise LinearSolveFailureError(func=self.__class__, reason=e.message) from e

        logger.debug('stage matrix factorized for coefficient %.6e', self.coefficient)

    def solve(self, rhs: FloatArray) -> FloatArray:
        try:
            solution = self._solver.solve(rhs)
        except RdgError as e:
            raise LinearSolveFailureError(func=self.solve, reason=e.message) from e

        if not np.all(np.isfinite(solution)):
            if not np.all(np.isfinite(rhs)):
                raise NonFiniteStateError(func=self.solve, reason='stage right-hand side')

            raise LinearSolveFailureError('Stage solve produced non-finite values!', self.solve)

        return solution

    def residual(self, rhs: FloatArray, solution: FloatArray) -> float:
        """Relative residual of a stage solution."""

        norm = float(np.linalg.norm(rhs))

        return float(np.linalg.norm(self.matrix @ solution - rhs)) / (norm if norm > 0.0 else 1.0)


def imex_step(system: SplitSystem, u: FloatArray, t: float, dt: float, tableau: ImexTableau) -> FloatArray:
    """
    One IMEX Runge-Kutta step.

    Each stage solves ``U_i - a_ii dt F_I(U_i) = U^n + dt sum_j (a_ij K_I,j + a_hat_ij K_E,j)``; the implicit stage
    derivative is recovered from the solve as ``(U_i - rhs) / (a_ii dt)``.

    :raises NonFiniteStateError:        The new state contains NaN or Inf.
    :raises LinearSolveFailureError:    A stage solve failed.
    """

    if not dt > 0.0:
        raise RdgValueError('Time step must be positive!', imex_step, dt)

    a, a_hat, b, b_hat, c = tableau.a, tableau.a_hat, tableau.b, tableau.b_hat, tableau.c
    s = tableau.stages
    u = np.asarray(u, dtype=np.float64)

    k_implicit: list[FloatArray | None] = [None] * s
    k_explicit: list[FloatArray | None] = [None] * s

    for i in range(s):
        ti = t + c[i] * dt

        rhs = u.copy()

        for j in range(i):
            if a[i, j] != 0.0:
                rhs += dt * a[i, j] * k_implicit[j]  # type: ignore[operator]
            if a_hat[i, j] != 0.0:
                rhs += dt * a_hat[i, j] * k_explicit[j]  # type: ignore[operator]

        if a[i, i] != 0.0:
            stage = system.solve_implicit(ti, a[i, i] * dt, rhs)
            k_implicit[i] = (stage - rhs) / (a[i, i] * dt)
        else:
            stage = rhs

            if b[i] != 0.0 or np.any(a[i + 1:, i] != 0.0):
                k_implicit[i] = system.implicit(ti, stage)

        if b_hat[i] != 0.0 or np.any(a_hat[i + 1:, i] != 0.0):
            k_explicit[i] = system.explicit(ti, stage)

    out = u.copy()

    for i in range(s):
        if b[i] != 0.0:
            out += dt * b[i] * k_implicit[i]  # type: ignore[operator]
        if b_hat[i] != 0.0:
            out += dt * b_hat[i] * k_explicit[i]  # type: ignore[operator]

    if not np.all(np.isfinite(out)):
        raise NonFiniteStateError(func=imex_step, reason=f't={t + dt:.6g}')

    return out


class StepRecord(NamedTuple):
    step: int
    t: float
    dt: float
    norm: float


class AdvanceResult(NamedTuple):
    dofs: FloatArray
    t: float
    log: list[StepRecord]

    @property
    def steps(self) -> int:
        return len(self.log)


def cfl_step(h_min: float, cfl: float, exponent: float = 1.0) -> float:
    """
    ``dt = cfl * h_min ** exponent``.

    An exponent of ``(k + 1) / 3`` keeps the third order time error at the size of the ``O(h^(k+1))``
    spatial error.
    """

    if not cfl > 0.0:
        raise RdgValueError('CFL number must be positive!', cfl_step, cfl)

    if not exponent > 0.0:
        raise RdgValueError('Step exponent must be positive!', cfl_step, exponent)

    return cfl * h_min ** exponent


def advance(
    system: SplitSystem, dofs0: FloatArray, t0: float, t_final: float, dt: float,
    tableau: ImexTableau | None = None, callback: Callable[[StepRecord, FloatArray], Any] | None = None
) -> AdvanceResult:
    """
    Integrate from `t0` to `t_final` with constant steps, the last one clipped to land on `t_final`.

    :param system:      Semi-discrete system.
    :param dofs0:       Initial state.
    :param t0:          Initial time.
    :param t_final:     Final time, not before `t0`.
    :param dt:          Step size, usually `cfl_step(mesh.h_min, cfl, exponent)`.
    :param tableau:     IMEX tableau, default `build_tableau()`.
    :param callback:    Called after every step with its record and the new state.

    :return:            Final state, final time and one record per step.

    :raises NonFiniteStateError:    The state blew up; its `log` holds the records of the completed steps.
    """

    if t_final < t0:
        raise RdgValueError('Final time is before the initial time!', advance, (t0, t_final))

    if not dt > 0.0:
        raise RdgValueError('Time step must be positive!', advance, dt)

    tableau = tableau or build_tableau()
    u = np.array(dofs0, dtype=np.float64)
    log: list[StepRecord] = []

    if t_final == t0:
        return AdvanceResult(u, t0, log)

    n_steps = max(1, math.ceil((t_final - t0) / dt * (1.0 - 1e-12)))
    times = [t0 + i * dt for i in range(n_steps)] + [t_final]

    for i in range(n_steps):
        t, step = times[i], times[i + 1] - times[i]

        try:
            u = imex_step(system, u, t, step, tableau)
        except NonFiniteStateError as e:
            logger.error('non-finite state in step %d at t=%.6g', i + 1, t)
            raise NonFiniteStateError(func=advance, reason=e.reason, log=log) from e

        record = StepRecord(i + 1, times[i + 1], step, float(np.linalg.norm(u)))
        log.append(record)

        logger.debug('step %d: t=%.6g dt=%.3e |u|=%.6e', *record)

        if callback is not None:
            callback(record, u)

    logger.info('advanced %d steps from t=%g to t=%g', n_steps, t0, t_final)

    return AdvanceResult(u, t_final, log)
