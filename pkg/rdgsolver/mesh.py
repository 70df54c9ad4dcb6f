from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cache, cached_property
from itertools import product
from typing import Iterable, Sequence

import numpy as np

from .exceptions import (
    InvalidElementError, NonMonotoneBreakpointsError, PointOutsideDomainError, TooFewElementsError,
    UnsupportedDimensionError
)
from .types import FloatArray, IntArray, StencilKind, TraceSide

__all__ = [
    'TensorMesh', 'Stencil', 'ElementId',

    'build_mesh', 'uniform_mesh', 'graded_breakpoints',

    'stencil_of', 'stencil_positions', 'regularity_ratio', 'STENCIL_WIDTH'
]

logger = logging.getLogger(__name__)

ElementId = tuple[int, ...]
"""Zero-based element multi-index, one entry per direction."""

STENCIL_WIDTH = 3


@dataclass(frozen=True)
class Stencil:
    owner: ElementId
    members: tuple[ElementId, ...]
    """Members in tensor order, direction 1 fastest; member (i, j) pairs 1D member i with 1D member j."""
    kinds: tuple[StencilKind, ...]
    """Stencil kind per direction."""

    @property
    def owner_position(self) -> int:
        return self.members.index(self.owner)


@dataclass(frozen=True, eq=False)
class TensorMesh:
    """
    Tensor-product rectangular partition in one or two dimensions.

    Elements are numbered direction-1-fastest: element (i, j) has linear index ``i + N_1 * j``.
    """

    breakpoints: tuple[FloatArray, ...]
    periodic: tuple[bool, ...]

    @property
    def dim(self) -> int:
        return len(self.breakpoints)

    @cached_property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(bp) - 1 for bp in self.breakpoints)

    @property
    def n_elements(self) -> int:
        return int(np.prod(self.shape))

    @cached_property
    def sizes(self) -> tuple[FloatArray, ...]:
        """Element lengths per direction."""
        return tuple(np.diff(bp) for bp in self.breakpoints)

    @cached_property
    def centers(self) -> tuple[FloatArray, ...]:
        return tuple(0.5 * (bp[1:] + bp[:-1]) for bp in self.breakpoints)

    @cached_property
    def bounds(self) -> tuple[tuple[float, float], ...]:
        return tuple((float(bp[0]), float(bp[-1])) for bp in self.breakpoints)

    @property
    def measure(self) -> float:
        return float(np.prod([hi - lo for lo, hi in self.bounds]))

    @property
    def h_max(self) -> float:
        return max(float(h.max()) for h in self.sizes)

    @property
    def h_min(self) -> float:
        return min(float(h.min()) for h in self.sizes)

    @cached_property
    def element_grid(self) -> IntArray:
        """Multi-indices of all elements in linear order, shape (n_elements, dim)."""
        grids = np.meshgrid(*[np.arange(n) for n in self.shape], indexing='ij')

        return np.stack([g.ravel(order='F') for g in grids], axis=-1).astype(np.int64)

    @cached_property
    def element_sizes(self) -> FloatArray:
        """Element lengths in every direction, shape (n_elements, dim)."""
        return np.stack([self.sizes[i][self.element_grid[:, i]] for i in range(self.dim)], axis=-1)

    @cached_property
    def element_centers(self) -> FloatArray:
        return np.stack([self.centers[i][self.element_grid[:, i]] for i in range(self.dim)], axis=-1)

    @cached_property
    def element_volumes(self) -> FloatArray:
        return np.prod(self.element_sizes, axis=-1)

    @cached_property
    def strides(self) -> tuple[int, ...]:
        return tuple(int(np.prod(self.shape[:i])) for i in range(self.dim))

    def linear_index(self, element: Sequence[int]) -> int:
        self._check_element(element)

        return int(sum(int(t) * s for t, s in zip(element, self.strides)))

    def multi_index(self, index: int) -> ElementId:
        if not 0 <= index < self.n_elements:
            raise InvalidElementError(func=self.multi_index, reason=index)

        return tuple(int(t) for t in self.element_grid[index])

    def _check_element(self, element: Sequence[int]) -> None:
        if len(element) != self.dim or any(not 0 <= t < n for t, n in zip(element, self.shape)):
            raise InvalidElementError(func=self.linear_index, reason=tuple(element))

    def neighbor(self, direction: int, index: int, shift: int) -> int | None:
        """One-dimensional neighbor index in `direction`, None past a non-periodic end."""

        n = self.shape[direction]
        other = index + shift

        if self.periodic[direction]:
            return other % n

        return other if 0 <= other < n else None

    def stencil_kind_1d(self, direction: int, index: int) -> StencilKind:
        if self.periodic[direction] or 0 < index < self.shape[direction] - 1:
            return StencilKind.CENTER

        return StencilKind.FORWARD if index == 0 else StencilKind.BACKWARD

    def stencil_1d(self, direction: int, index: int) -> tuple[tuple[int, int, int], StencilKind]:
        """Members (left to right) and kind of the one-dimensional stencil of element `index`."""

        n = self.shape[direction]

        if not 0 <= index < n:
            raise InvalidElementError(func=self.stencil_1d, reason=(direction, index))

        kind = self.stencil_kind_1d(direction, index)
        members = tuple((index + s) % n for s in kind.member_shifts)

        return members, kind  # type: ignore[return-value]

    def stencil_geometry_1d(self, direction: int, index: int) -> tuple[FloatArray, FloatArray]:
        """
        Size ratios ``a = h_member / h_owner`` and scaled offsets ``b = 2 (x_member - x_owner) / h_owner``
        of the stencil members of element `index`, with positions unwrapped across periodic ends.
        """

        members, kind = self.stencil_1d(direction, index)
        h = self.sizes[direction]

        sizes = h[list(members)]
        owner = kind.member_shifts.index(0)

        offsets = np.zeros(STENCIL_WIDTH)

        for s in range(owner + 1, STENCIL_WIDTH):
            offsets[s] = offsets[s - 1] + 0.5 * (sizes[s - 1] + sizes[s])

        for s in range(owner - 1, -1, -1):
            offsets[s] = offsets[s + 1] - 0.5 * (sizes[s + 1] + sizes[s])

        return sizes / h[index], 2.0 * offsets / h[index]

    @cached_property
    def stencil_table(self) -> tuple[IntArray, IntArray]:
        """Linear member indices, shape (n_elements, 3^dim), and kinds per direction, shape (n_elements, dim)."""

        members_1d, kinds_1d = [], []

        for direction, n in enumerate(self.shape):
            table = [self.stencil_1d(direction, i) for i in range(n)]
            members_1d.append(np.array([t[0] for t in table], dtype=np.int64))
            kinds_1d.append(np.array([int(t[1]) for t in table], dtype=np.int64))

        grid = self.element_grid
        members = np.zeros((self.n_elements, STENCIL_WIDTH ** self.dim), dtype=np.int64)

        for position, local in enumerate(stencil_positions(self.dim)):
            for direction, s in enumerate(local):
                members[:, position] += members_1d[direction][grid[:, direction], s] * self.strides[direction]

        kinds = np.stack([kinds_1d[i][grid[:, i]] for i in range(self.dim)], axis=-1)

        return members, kinds

    def locate(self, points: FloatArray, side: TraceSide = TraceSide.PLUS, tol: float = 1e-12) -> IntArray:
        """
        Linear index of the element containing every point.

        :param points:      Points with shape (..., dim).
        :param side:        On an interface, PLUS picks the element on the positive side, MINUS the other one.
        :param tol:         Relative slack allowed outside the domain bounds.

        :return:            Element indices with shape (...).
        """

        points = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        index = np.zeros(points.shape[0], dtype=np.int64)

        for direction, bp in enumerate(self.breakpoints):
            x = points[:, direction]
            slack = tol * (bp[-1] - bp[0])

            if np.any((x < bp[0] - slack) | (x > bp[-1] + slack)):
                raise PointOutsideDomainError(func=self.locate, reason=f'direction {direction}')

            found = np.searchsorted(bp, x, side='right' if side is TraceSide.PLUS else 'left') - 1
            index += np.clip(found, 0, len(bp) - 2) * self.strides[direction]

        return index

    def to_reference(self, points: FloatArray, elements: IntArray) -> FloatArray:
        """Map physical points to reference coordinates in [-1, 1]^dim of the given elements."""
        return 2.0 * (points - self.element_centers[elements]) / self.element_sizes[elements]

    def to_physical(self, reference: FloatArray) -> FloatArray:
        """Map reference points, shape (n, dim), into every element, giving shape (n_elements, n, dim)."""
        return self.element_centers[:, None, :] + 0.5 * self.element_sizes[:, None, :] * reference[None, :, :]


def build_mesh(
    dim: int, breakpoints_per_direction: Iterable[Sequence[float] | FloatArray],
    periodic_per_direction: bool | Iterable[bool] = False
) -> TensorMesh:
    """
    Build and validate a tensor mesh.

    :param dim:                         Spatial dimension, 1 or 2.
    :param breakpoints_per_direction:   Strictly increasing breakpoints for every direction.
    :param periodic_per_direction:      Periodicity flag per direction, or one flag for all.

    :return:                            The mesh.

    :raises UnsupportedDimensionError:      Dimension other than 1 or 2, or per-direction inputs of the wrong length.
    :raises NonMonotoneBreakpointsError:    Breakpoints not strictly increasing.
    :raises TooFewElementsError:            Fewer than three elements in some direction.
    """

    if dim not in (1, 2):
        raise UnsupportedDimensionError('Only one and two dimensional meshes are supported!', build_mesh, dim)

    breakpoints = tuple(np.asarray(bp, dtype=np.float64).copy() for bp in breakpoints_per_direction)

    if len(breakpoints) != dim:
        raise UnsupportedDimensionError('Need one breakpoint sequence per direction!', build_mesh, len(breakpoints))

    if isinstance(periodic_per_direction, bool):
        periodic = (periodic_per_direction, ) * dim
    else:
        periodic = tuple(bool(p) for p in periodic_per_direction)

    if len(periodic) != dim:
        raise UnsupportedDimensionError('Need one periodicity flag per direction!', build_mesh, periodic)

    for direction, bp in enumerate(breakpoints):
        if bp.ndim != 1 or not np.all(np.isfinite(bp)) or np.any(np.diff(bp) <= 0.0):
            raise NonMonotoneBreakpointsError(func=build_mesh, reason=f'direction {direction}')

        if len(bp) < STENCIL_WIDTH + 1:
            raise TooFewElementsError(func=build_mesh, reason=f'{len(bp) - 1} elements in direction {direction}')

        if periodic[direction] and len(bp) == STENCIL_WIDTH + 1:
            logger.warning('periodic direction %d has exactly three elements; stencils wrap onto themselves', direction)

    for bp in breakpoints:
        bp.setflags(write=False)

    return TensorMesh(breakpoints, periodic)


def uniform_mesh(
    cells: int | Sequence[int], lower: float | Sequence[float], upper: float | Sequence[float],
    periodic: bool | Sequence[bool] = False, dim: int | None = None
) -> TensorMesh:
    """Uniform mesh on a box; scalar arguments are broadcast to every direction."""

    if dim is None:
        dim = next((len(v) for v in (cells, lower, upper) if isinstance(v, Sequence)), 1)

    cells_, lower_, upper_ = (
        list(v) if isinstance(v, Sequence) else [v] * dim for v in (cells, lower, upper)  # type: ignore[list-item]
    )

    return build_mesh(
        dim, [np.linspace(lo, hi, int(n) + 1) for n, lo, hi in zip(cells_, lower_, upper_)],
        periodic if isinstance(periodic, bool) else tuple(periodic)
    )


def graded_breakpoints(
    lower: float, upper: float, cells: int, ratio: float = 2.0, seed: int | None = 0
) -> FloatArray:
    """
    Breakpoints with random element sizes drawn uniformly from ``[1, ratio]`` times a base size.

    Consecutive sizes, and the global max/min, differ by at most `ratio`.
    """

    rng = np.random.default_rng(seed)
    sizes = rng.uniform(1.0, ratio, cells)
    sizes *= (upper - lower) / sizes.sum()

    breakpoints = lower + np.concatenate([[0.0], np.cumsum(sizes)])
    breakpoints[-1] = upper

    return breakpoints


def stencil_of(mesh: TensorMesh, element: Sequence[int] | int) -> Stencil:
    """
    Stencil of an element: tensor product of the one-dimensional stencils of every direction.

    :param mesh:        Mesh.
    :param element:     Element multi-index or linear index.

    :return:            The 3^dim member stencil.
    """

    owner = mesh.multi_index(element) if isinstance(element, (int, np.integer)) else tuple(int(t) for t in element)
    mesh._check_element(owner)

    per_direction = [mesh.stencil_1d(direction, t) for direction, t in enumerate(owner)]

    members = tuple(
        tuple(per_direction[direction][0][s] for direction, s in enumerate(position))
        for position in stencil_positions(mesh.dim)
    )

    return Stencil(owner, members, tuple(kind for _, kind in per_direction))


def regularity_ratio(mesh: TensorMesh) -> float:
    """Largest element length over smallest, across all directions."""
    return mesh.h_max / mesh.h_min


@cache
def stencil_positions(dim: int) -> tuple[tuple[int, ...], ...]:
    """Per-direction member slots of every tensor stencil position, direction 1 fastest."""
    return tuple(tuple(reversed(p)) for p in product(range(STENCIL_WIDTH), repeat=dim))
