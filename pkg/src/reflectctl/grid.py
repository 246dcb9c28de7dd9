"""Uniform rectangular grids, finite-difference stencils and interpolation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GridError(ValueError):
    pass


class OutOfRange(GridError):
    """Query point outside the grid rectangle."""


@dataclass(frozen=True)
class Grid2D:
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    n1: int
    n2: int

    def __post_init__(self):
        if self.n1 < 16 or self.n2 < 16:
            raise GridError(f"need at least 16 nodes per axis, got {self.n1}x{self.n2}")
        if not (self.x1_max > self.x1_min and self.x2_max > self.x2_min):
            raise GridError("empty grid rectangle")

    @property
    def h1(self) -> float:
        return (self.x1_max - self.x1_min) / (self.n1 - 1)

    @property
    def h2(self) -> float:
        return (self.x2_max - self.x2_min) / (self.n2 - 1)

    @property
    def x1(self) -> np.ndarray:
        return np.linspace(self.x1_min, self.x1_max, self.n1)

    @property
    def x2(self) -> np.ndarray:
        return np.linspace(self.x2_min, self.x2_max, self.n2)

    @property
    def shape(self) -> tuple:
        return (self.n2, self.n1)

    def mesh(self):
        """``(X1, X2)`` arrays of shape ``(n2, n1)``."""
        return np.meshgrid(self.x1, self.x2)

    def refine(self) -> "Grid2D":
        """Halve both spacings; old nodes remain nodes."""
        return Grid2D(self.x1_min, self.x1_max, self.x2_min, self.x2_max, 2 * self.n1 - 1, 2 * self.n2 - 1)

    def box(self) -> tuple:
        return (self.x1_min, self.x1_max, self.x2_min, self.x2_max)

    def interior_mask(self, cells: int) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[cells : self.n2 - cells, cells : self.n1 - cells] = True
        return m

    def contains(self, x1, x2) -> bool:
        return self.x1_min <= x1 <= self.x1_max and self.x2_min <= x2 <= self.x2_max

    def to_dict(self) -> dict:
        return {
            "x1_min": self.x1_min,
            "x1_max": self.x1_max,
            "x2_min": self.x2_min,
            "x2_max": self.x2_max,
            "n1": self.n1,
            "n2": self.n2,
        }


@dataclass(frozen=True)
class ScalarField:
    grid: Grid2D
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise GridError("field has non-finite entries")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: Grid2D, f) -> "ScalarField":
        X1, X2 = grid.mesh()
        return cls(grid, np.broadcast_to(f(X1, X2), grid.shape))

    def __add__(self, other):
        return ScalarField(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * _vals(other))

    __rmul__ = __mul__

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def _vals(x):
    return x.values if isinstance(x, ScalarField) else x


# --------------------------------------------------------------------------
# stencils
# --------------------------------------------------------------------------


def _first(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(v, h, axis=axis, edge_order=2)


def _second(v: np.ndarray, h: float, axis: int) -> np.ndarray:
    v = np.moveaxis(v, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / h**2
    # second-order one-sided four-point stencils
    out[0] = (2 * v[0] - 5 * v[1] + 4 * v[2] - v[3]) / h**2
    out[-1] = (2 * v[-1] - 5 * v[-2] + 4 * v[-3] - v[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def d1(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, _first(f.values, f.grid.h1, 1))


def d2(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, _first(f.values, f.grid.h2, 0))


def d11(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, _second(f.values, f.grid.h1, 1))


def d22(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, _second(f.values, f.grid.h2, 0))


def d12(f: ScalarField) -> ScalarField:
    return d2(d1(f))


# --------------------------------------------------------------------------
# interpolation
# --------------------------------------------------------------------------


def _locate(grid: Grid2D, x1: float, x2: float):
    if not grid.contains(x1, x2):
        raise OutOfRange(f"point ({x1}, {x2}) outside grid rectangle {grid.box()}")
    s = (x1 - grid.x1_min) / grid.h1
    t = (x2 - grid.x2_min) / grid.h2
    i = min(int(s), grid.n1 - 2)
    j = min(int(t), grid.n2 - 2)
    return i, j, s - i, t - j


def interp_bilinear(field: ScalarField, x) -> float:
    i, j, a, b = _locate(field.grid, float(x[0]), float(x[1]))
    v = field.values
    return float(
        (1 - a) * (1 - b) * v[j, i] + a * (1 - b) * v[j, i + 1] + (1 - a) * b * v[j + 1, i] + a * b * v[j + 1, i + 1]
    )


def interp_gradient(field: ScalarField, x) -> np.ndarray:
    g = field.grid
    i, j, a, b = _locate(g, float(x[0]), float(x[1]))
    v = field.values
    g1 = ((1 - b) * (v[j, i + 1] - v[j, i]) + b * (v[j + 1, i + 1] - v[j + 1, i])) / g.h1
    g2 = ((1 - a) * (v[j + 1, i] - v[j, i]) + a * (v[j + 1, i + 1] - v[j, i + 1])) / g.h2
    return np.array([g1, g2])


# --------------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------------


def write_fields_csv(path, grid: Grid2D, columns: dict) -> None:
    """Write ``x1,x2,<columns...>`` in row-major node order, 17 significant digits."""
    X1, X2 = grid.mesh()
    names = ["x1", "x2", *columns]
    data = [X1.ravel(), X2.ravel()] + [_vals(c).reshape(-1) for c in columns.values()]
    np.savetxt(path, np.column_stack(data), delimiter=",", fmt="%.17g", header=",".join(names), comments="")


def write_field_csv(path, field: ScalarField) -> None:
    write_fields_csv(path, field.grid, {"value": field})


def read_field_csv(path, grid: Grid2D, column: str = "value") -> ScalarField:
    with open(path) as fh:
        names = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return ScalarField(grid, data[:, names.index(column)].reshape(grid.shape))
