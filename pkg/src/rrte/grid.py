"""Uniform grids over the slab domain, node fields, interpolation and norms.

Arrays are stored depth-major: ``values[k, i]`` is the value at
``(x_i, y_k) = (x0 + i*h, y0 + k*h_y)``.  The depth coordinate ``y`` grows
away from the source line ``y = 0``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

__all__ = [
    "Domain2D",
    "Grid2D",
    "ScalarField2D",
    "SourceGrid",
    "interp_bilinear",
    "trapezoid_alpha",
    "trapezoid_weights",
    "diff_x",
    "diff_y",
    "depth_weights",
    "norm_H1h",
    "inner_H1h",
]


@dataclass(frozen=True)
class Domain2D:
    """Omega = (-A, A) x (a, b) with sources on {(alpha, 0): |alpha| <= d}."""

    A: float = 0.5
    a: float = 1.0
    b: float = 2.0
    d: float = 0.5

    def __post_init__(self):
        if not (self.A > 0 and self.d > 0):
            raise ValueError(f"A and d must be positive, got A={self.A}, d={self.d}")
        if not (0 < self.a < self.b):
            raise ValueError(f"need 0 < a < b, got a={self.a}, b={self.b}")

    @property
    def A_tilde(self) -> float:
        return max(self.A, self.d)

    def contains(self, x, y, closed: bool = True):
        x = np.asarray(x)
        y = np.asarray(y)
        if closed:
            return (np.abs(x) <= self.A) & (y >= self.a) & (y <= self.b)
        return (np.abs(x) < self.A) & (y > self.a) & (y < self.b)


@dataclass(frozen=True)
class Grid2D:
    """Tensor grid with ``m`` transverse and ``m_y`` depth intervals.

    ``x0, y0, x1, y1`` default to the closure of the domain; the eikonal
    solver uses a larger box built with :meth:`box`.
    """

    domain: Domain2D
    m: int
    m_y: int
    x0: float = None
    x1: float = None
    y0: float = None
    y1: float = None
    h_min: float = 1e-6

    def __post_init__(self):
        if self.m < 2 or self.m_y < 2:
            raise ValueError(f"need at least 2 intervals per axis, got m={self.m}, m_y={self.m_y}")
        if self.x0 is None:
            object.__setattr__(self, "x0", -self.domain.A)
            object.__setattr__(self, "x1", self.domain.A)
        if self.y0 is None:
            object.__setattr__(self, "y0", self.domain.a)
            object.__setattr__(self, "y1", self.domain.b)
        if not (self.x1 > self.x0 and self.y1 > self.y0):
            raise ValueError("degenerate grid box")
        if min(self.h, self.h_y) < self.h_min:
            raise ValueError(f"grid step below floor h_0={self.h_min}")

    @classmethod
    def box(cls, domain: Domain2D, h: float, x0: float, x1: float, y0: float, y1: float) -> "Grid2D":
        """Grid with square cells of side ``h`` snapped so that the box edges are nodes."""
        m = int(round((x1 - x0) / h))
        m_y = int(round((y1 - y0) / h))
        return cls(domain, m, m_y, x0, x0 + m * h, y0, y0 + m_y * h)

    @property
    def h(self) -> float:
        return (self.x1 - self.x0) / self.m

    @property
    def h_y(self) -> float:
        return (self.y1 - self.y0) / self.m_y

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m_y + 1, self.m + 1)

    @property
    def x(self) -> np.ndarray:
        return self.x0 + self.h * np.arange(self.m + 1)

    @property
    def y(self) -> np.ndarray:
        return self.y0 + self.h_y * np.arange(self.m_y + 1)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(X, Y)`` node coordinates, each of :attr:`shape`."""
        return np.meshgrid(self.x, self.y)

    def node(self, i: int, k: int) -> tuple[float, float]:
        return (self.x0 + i * self.h, self.y0 + k * self.h_y)

    def index_of(self, x: float, y: float, tol: float = 1e-9) -> tuple[int, int]:
        """Indices ``(k, i)`` of the node at ``(x, y)``; raises if it is not a node."""
        fi = (x - self.x0) / self.h
        fk = (y - self.y0) / self.h_y
        i, k = int(round(fi)), int(round(fk))
        if abs(fi - i) > tol or abs(fk - k) > tol or not (0 <= i <= self.m and 0 <= k <= self.m_y):
            raise ValueError(f"point ({x}, {y}) is not a node of the grid")
        return k, i

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = True
        mask[:, 0] = mask[:, -1] = True
        return mask

    def field(self, values) -> "ScalarField2D":
        return ScalarField2D(self, np.asarray(values, dtype=float))

    def zeros(self) -> "ScalarField2D":
        return ScalarField2D(self, np.zeros(self.shape))

    def sample(self, func) -> "ScalarField2D":
        X, Y = self.mesh()
        return ScalarField2D(self, np.broadcast_to(np.asarray(func(X, Y), dtype=float), self.shape).copy())


@dataclass(frozen=True)
class ScalarField2D:
    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"values shape {v.shape} does not match grid shape {self.grid.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, x, y):
        return interp_bilinear(self, (x, y))

    def to_csv(self, path, name: str = "value") -> None:
        write_field_csv(path, self.grid, {name: self.values})


def write_field_csv(path, grid: Grid2D, columns: dict[str, np.ndarray]) -> None:
    """Write node fields as ``x,y,<col>...`` rows with 15 significant digits."""
    X, Y = grid.mesh()
    names = list(columns)
    data = np.column_stack([X.ravel(), Y.ravel()] + [np.asarray(columns[n]).ravel() for n in names])
    np.savetxt(Path(path), data, delimiter=",", header=",".join(["x", "y"] + names), comments="", fmt="%.15g")


def read_field_csv(path, grid: Grid2D, name: str = "value") -> ScalarField2D:
    data = np.genfromtxt(Path(path), delimiter=",", names=True)
    vals = np.empty(grid.shape)
    for x, y, v in zip(data["x"], data["y"], data[name]):
        k, i = grid.index_of(x, y, tol=1e-6)
        vals[k, i] = v
    return ScalarField2D(grid, vals)


@dataclass(frozen=True)
class SourceGrid:
    """Equispaced source positions ``alpha_j = -d + j*h_alpha``, j = 0..m_alpha."""

    d: float
    m_alpha: int

    def __post_init__(self):
        if self.d <= 0 or self.m_alpha < 1:
            raise ValueError("need d > 0 and m_alpha >= 1")

    @property
    def h_alpha(self) -> float:
        return 2.0 * self.d / self.m_alpha

    @property
    def nodes(self) -> np.ndarray:
        a = -self.d + self.h_alpha * np.arange(self.m_alpha + 1)
        a[-1] = self.d
        return a

    @property
    def weights(self) -> np.ndarray:
        return trapezoid_weights(self.m_alpha + 1, self.h_alpha)

    def __len__(self) -> int:
        return self.m_alpha + 1


def interp_bilinear(field: ScalarField2D, p, tol: float = 1e-10):
    """Tensor-product linear interpolant of ``field`` at ``p = (x, y)``.

    ``x`` and ``y`` may be scalars or arrays of equal shape.  Points outside
    the grid box (beyond ``tol``) raise ``ValueError``.
    """
    g = field.grid
    x = np.asarray(p[0], dtype=float)
    y = np.asarray(p[1], dtype=float)
    bad = (x < g.x0 - tol) | (x > g.x1 + tol) | (y < g.y0 - tol) | (y > g.y1 + tol)
    if np.any(bad):
        j = np.flatnonzero(np.atleast_1d(bad))[0]
        px, py = np.atleast_1d(x)[j], np.atleast_1d(y)[j]
        raise ValueError(
            f"point ({px:.6g}, {py:.6g}) outside grid box [{g.x0:.6g}, {g.x1:.6g}] x [{g.y0:.6g}, {g.y1:.6g}]"
        )
    out = kernels.bilinear(field.values, g.x0, g.y0, g.h, g.h_y, np.atleast_1d(x).ravel(), np.atleast_1d(y).ravel())
    if x.ndim == 0:
        return float(out[0])
    return out.reshape(x.shape)


def trapezoid_weights(n: int, step: float) -> np.ndarray:
    if n < 2:
        raise ValueError(f"composite trapezoid needs at least 2 samples, got {n}")
    w = np.full(n, step)
    w[0] = w[-1] = 0.5 * step
    return w


def trapezoid_alpha(samples, h_alpha: float, axis: int = -1):
    """Composite trapezoid over equispaced source samples along ``axis``."""
    s = np.asarray(samples, dtype=float)
    w = trapezoid_weights(s.shape[axis], h_alpha)
    return np.tensordot(s, w, axes=([axis], [0]))


def depth_weights(grid: Grid2D) -> np.ndarray:
    """Trapezoid weights in depth, length ``m_y + 1``."""
    return trapezoid_weights(grid.m_y + 1, grid.h_y)


def diff_x(values: np.ndarray, h: float) -> np.ndarray:
    """Central x-difference on interior columns; last axis is x.  Shape loses 2 columns."""
    return (values[..., 2:] - values[..., :-2]) / (2.0 * h)


def diff_y(values: np.ndarray, h_y: float) -> np.ndarray:
    """Depth derivative on every row: central inside, one-sided second order at the faces.

    The depth axis is the second to last.
    """
    v = np.asarray(values)
    out = np.empty_like(v, dtype=float)
    out[..., 1:-1, :] = (v[..., 2:, :] - v[..., :-2, :]) / (2.0 * h_y)
    out[..., 0, :] = (-3.0 * v[..., 0, :] + 4.0 * v[..., 1, :] - v[..., 2, :]) / (2.0 * h_y)
    out[..., -1, :] = (3.0 * v[..., -1, :] - 4.0 * v[..., -2, :] + v[..., -3, :]) / (2.0 * h_y)
    return out


def inner_H1h(U: np.ndarray, V: np.ndarray, grid: Grid2D) -> float:
    """Semidiscrete H^1 inner product of two ``(N, m_y+1, m+1)`` coefficient stacks.

    Interior columns i = 1..m-1 only, trapezoid in depth, central x-differences.
    """
    U = np.asarray(U, dtype=float)
    V = np.asarray(V, dtype=float)
    if U.ndim == 2:
        U, V = U[None], V[None]
    wy = depth_weights(grid)[:, None] * grid.h
    s = np.sum(wy * np.sum(U[..., 1:-1] * V[..., 1:-1], axis=0))
    s += np.sum(wy * np.sum(diff_x(U, grid.h) * diff_x(V, grid.h), axis=0))
    s += np.sum(wy * np.sum(diff_y(U, grid.h_y)[..., 1:-1] * diff_y(V, grid.h_y)[..., 1:-1], axis=0))
    return float(s)


def norm_H1h(V: np.ndarray, grid: Grid2D) -> float:
    return math.sqrt(max(inner_H1h(V, V, grid), 0.0))
