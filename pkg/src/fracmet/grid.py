"""Periodic uniform grids on the flat torus [0, 2pi)^m and finite-difference stencils.

Fields are stored as numpy arrays of shape ``batch + grid.shape + fiber_shape``;
all stencil routines locate the grid axes from the end of the array so that
arbitrary leading batch axes broadcast through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ParameterError, ShapeError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on the m-torus with n nodes per axis.

    Node ordering is row major: in two dimensions node (i, j) has flat
    index i*n + j, with coordinates (i*h, j*h).
    """

    dim: int
    n: int
    stencil_order: int = 4

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ParameterError(f"dim must be 1 or 2, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ParameterError(f"n must be even and >= 8, got {self.n}")
        if self.stencil_order not in (2, 4):
            raise ParameterError(f"stencil_order must be 2 or 4, got {self.stencil_order}")

    @property
    def h(self) -> float:
        return TWO_PI / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def num_nodes(self) -> int:
        return self.n ** self.dim

    def coordinates(self):
        """Coordinate arrays, one per axis, each of shape ``grid.shape``."""
        axes = [np.arange(self.n) * self.h for _ in range(self.dim)]
        return np.meshgrid(*axes, indexing="ij")

    def node_iter(self):
        """Ordered list of node multi-indices in the documented row-major order."""
        return list(np.ndindex(self.shape))

    def axis_position(self, axis: int, values: np.ndarray, fiber_ndim: int = 0) -> int:
        if axis < 0 or axis >= self.dim:
            raise ParameterError(f"axis {axis} out of range for dim {self.dim}")
        pos = values.ndim - fiber_ndim - self.dim + axis
        if pos < 0 or values.shape[pos] != self.n:
            raise ShapeError(
                f"array of shape {values.shape} does not hold a dim-{self.dim} "
                f"grid of n={self.n} with fiber_ndim={fiber_ndim}"
            )
        return pos


def partial(grid: Grid, values: np.ndarray, axis: int, fiber_ndim: int = 0) -> np.ndarray:
    """Central finite difference along a grid axis, periodic wrap-around.

    Accuracy O(h^2) or O(h^4) depending on ``grid.stencil_order``.
    """
    ax = grid.axis_position(axis, values, fiber_ndim)
    h = grid.h
    if grid.stencil_order == 2:
        return (np.roll(values, -1, ax) - np.roll(values, 1, ax)) / (2.0 * h)
    return (
        -np.roll(values, -2, ax)
        + 8.0 * np.roll(values, -1, ax)
        - 8.0 * np.roll(values, 1, ax)
        + np.roll(values, 2, ax)
    ) / (12.0 * h)


def second_partial(grid: Grid, values: np.ndarray, axis1: int, axis2: int,
                   fiber_ndim: int = 0) -> np.ndarray:
    """Second coordinate derivative d^2/dx_a dx_b.

    Equal axes use the compact symmetric stencil of the matching order (the
    classical 3- or 5-point second difference); mixed axes compose central
    first differences.  The compact choice reproduces the standard discrete
    dispersion (2 - 2 cos k h)/h^2 at order 2.
    """
    if axis1 == axis2:
        ax = grid.axis_position(axis1, values, fiber_ndim)
        h2 = grid.h ** 2
        if grid.stencil_order == 2:
            return (np.roll(values, -1, ax) - 2.0 * values + np.roll(values, 1, ax)) / h2
        return (
            -np.roll(values, -2, ax)
            + 16.0 * np.roll(values, -1, ax)
            - 30.0 * values
            + 16.0 * np.roll(values, 1, ax)
            - np.roll(values, 2, ax)
        ) / (12.0 * h2)
    return partial(grid, partial(grid, values, axis2, fiber_ndim), axis1, fiber_ndim)


def translate(grid: Grid, values: np.ndarray, shifts, fiber_ndim: int = 0) -> np.ndarray:
    """Pull back a field along the grid translation x -> x + shifts*h.

    ``shifts`` is one integer per axis (whole grid cells).  The pullback
    (phi^* u)(x) = u(x + s h) is np.roll with negative shift.
    """
    out = values
    for axis, s in enumerate(shifts):
        ax = grid.axis_position(axis, out, fiber_ndim)
        out = np.roll(out, -int(s), ax)
    return out


def flip(grid: Grid, values: np.ndarray, axis: int, fiber_ndim: int = 0,
         covariant_signs=None) -> np.ndarray:
    """Pull back a field along the reflection x_axis -> -x_axis.

    Node j maps to (n - j) mod n.  ``covariant_signs`` is an optional array
    broadcastable over the fiber axes carrying the component sign changes of
    tensor indices under the reflection (handled by callers that know the
    variance structure).
    """
    ax = grid.axis_position(axis, values, fiber_ndim)
    idx = (-np.arange(grid.n)) % grid.n
    out = np.take(values, idx, axis=ax)
    if covariant_signs is not None:
        out = out * covariant_signs
    return out


@dataclass
class ScalarField:
    """Node-wise real scalar field (section of the trivial line bundle)."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ShapeError(
                f"values shape {self.values.shape} != grid shape {self.grid.shape}"
            )

    def flatten(self) -> np.ndarray:
        return self.values.reshape(-1).copy()

    @classmethod
    def unflatten(cls, grid: Grid, vec: np.ndarray) -> "ScalarField":
        vec = np.asarray(vec, dtype=float)
        if vec.size != grid.num_nodes:
            raise ShapeError(f"vector length {vec.size} != node count {grid.num_nodes}")
        return cls(grid, vec.reshape(grid.shape))

    def to_json_dict(self) -> dict:
        return {"dim": self.grid.dim, "n": self.grid.n, "values": self.flatten().tolist()}

    @classmethod
    def from_json_dict(cls, data: dict, stencil_order: int = 4) -> "ScalarField":
        grid = Grid(int(data["dim"]), int(data["n"]), stencil_order)
        return cls.unflatten(grid, np.asarray(data["values"], dtype=float))


def partial_derivative(f: ScalarField, axis: int) -> ScalarField:
    """Central-difference partial derivative of a scalar field."""
    return ScalarField(f.grid, partial(f.grid, f.values, axis))
