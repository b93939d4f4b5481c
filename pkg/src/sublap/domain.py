"""Grids, scalar fields, quadrature, and discrete Laplacians.

Two geometries are supported: an interval [x_lo, x_hi] and a ball of radius R
in dimension N >= 1 (fields depend on r = |x| only).  Both use uniform nodes
with spacing h; node 0 and node n+1 are the endpoints.  On the ball only
r = R is a boundary node: the center r = 0 is an interior unknown handled by
symmetry, with the exact limit  Lap u(0) = N * u''(0).

The radial operator u'' + (N-1)/r u' is discretized in conservative (flux)
form,

    (Lap_h u)_i = [f_{i-1/2} (u_{i-1} - u_i) + f_{i+1/2} (u_{i+1} - u_i)] / (h m_i),

with face areas f = omega_{N-1} r^{N-1} and exact cell moments m_i of the
volume measure.  This is second order, exact on {1, r^2}, reduces to the
standard three-point stencil on intervals, and makes the stiffness matrix
symmetric under the quadrature weights (discrete integration by parts holds
to round-off).  Neumann conditions use second-order ghost reflection, which
the flux form realizes by dropping the boundary face.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np
from numpy.typing import NDArray


class DomainError(ValueError):
    """Invalid grid construction or mismatched operands."""


class DegenerateInterval(DomainError):
    pass


class GridMismatch(DomainError):
    pass


class BoundaryCondition(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


DIRICHLET = BoundaryCondition.DIRICHLET
NEUMANN = BoundaryCondition.NEUMANN


@dataclass(frozen=True)
class Line:
    x_lo: float
    x_hi: float


@dataclass(frozen=True)
class Radial:
    radius: float
    dim: int  # spatial dimension N >= 1


Geometry = Union[Line, Radial]


def unit_sphere_area(dim: int) -> float:
    """Surface area of the unit sphere in R^dim: 2 pi^(d/2) / Gamma(d/2)."""
    if not isinstance(dim, (int, np.integer)) or dim < 1:
        raise DomainError(f"dimension must be an integer >= 1, got {dim!r}")
    return 2.0 * math.pi ** (dim / 2.0) / math.gamma(dim / 2.0)


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform grid with precomputed quadrature weights and flux coefficients.

    Arrays (all read-only):
      nodes         coordinates, length n_interior + 2
      quad_weights  cell volumes; integrate(f) = sum(w * f)
      faces         face areas between nodes i and i+1, length n_interior + 1
      lower/upper   Laplacian couplings: (Lap u)_i = lower_i (u_{i-1} - u_i)
                    + upper_i (u_{i+1} - u_i)
    """

    geometry: Geometry
    n_interior: int
    h: float
    nodes: NDArray[np.float64]
    quad_weights: NDArray[np.float64]
    faces: NDArray[np.float64]
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]

    @property
    def n_nodes(self) -> int:
        return self.n_interior + 2

    @property
    def is_radial(self) -> bool:
        return isinstance(self.geometry, Radial)

    @property
    def diameter(self) -> float:
        if isinstance(self.geometry, Line):
            return self.geometry.x_hi - self.geometry.x_lo
        return 2.0 * self.geometry.radius

    @property
    def boundary_indices(self) -> tuple[int, ...]:
        """Nodes lying on the domain boundary (the center of a ball is not one)."""
        if self.is_radial:
            return (self.n_nodes - 1,)
        return (0, self.n_nodes - 1)

    def unknown_slice(self, bc: BoundaryCondition) -> slice:
        """Index range of the nodes carrying equations under the given BC."""
        if bc is NEUMANN:
            return slice(0, self.n_nodes)
        if self.is_radial:
            return slice(0, self.n_nodes - 1)
        return slice(1, self.n_nodes - 1)

    def distance_to_boundary(self) -> NDArray[np.float64]:
        x = self.nodes
        if self.is_radial:
            return self.geometry.radius - x
        return np.minimum(x - self.geometry.x_lo, self.geometry.x_hi - x)

    def compatible(self, other: "Grid") -> bool:
        return self is other or (
            self.geometry == other.geometry and self.n_interior == other.n_interior
        )


def build_grid(geometry: Geometry, n_interior: int) -> Grid:
    if not isinstance(n_interior, (int, np.integer)) or n_interior < 3:
        raise DomainError(f"n_interior must be an integer >= 3, got {n_interior!r}")
    n = int(n_interior)

    if isinstance(geometry, Line):
        if not (geometry.x_hi > geometry.x_lo):
            raise DegenerateInterval(
                f"empty interval [{geometry.x_lo}, {geometry.x_hi}]"
            )
        h = (geometry.x_hi - geometry.x_lo) / (n + 1)
        nodes = geometry.x_lo + h * np.arange(n + 2)
        faces = np.ones(n + 1)
        w = np.full(n + 2, h)
        w[0] = w[-1] = h / 2.0
    elif isinstance(geometry, Radial):
        if not (geometry.radius > 0):
            raise DomainError(f"radius must be positive, got {geometry.radius}")
        dim = geometry.dim
        omega = unit_sphere_area(dim)
        h = geometry.radius / (n + 1)
        nodes = h * np.arange(n + 2)
        faces = omega * ((np.arange(n + 1) + 0.5) * h) ** (dim - 1)
        # exact moments of r^{N-1} over each cell, so sum(w) is the ball volume
        lo = np.maximum(nodes - h / 2.0, 0.0)
        hi = np.minimum(nodes + h / 2.0, geometry.radius)
        w = omega * (hi**dim - lo**dim) / dim
    else:
        raise DomainError(f"unknown geometry {geometry!r}")

    lower = np.zeros(n + 2)
    upper = np.zeros(n + 2)
    lower[1:] = faces / (h * w[1:])
    upper[:-1] = faces / (h * w[:-1])

    for arr in (nodes, w, faces, lower, upper):
        arr.setflags(write=False)
    return Grid(geometry, n, h, nodes, w, faces, lower, upper)


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal values of a function on a grid (boundary nodes included)."""

    grid: Grid
    values: NDArray[np.float64]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise GridMismatch(
                f"field has {vals.shape} values, grid has {self.grid.n_nodes} nodes"
            )
        if not np.all(np.isfinite(vals)):
            raise DomainError("field values must be finite")
        vals = vals.copy()
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def norm_inf(self) -> float:
        return float(np.max(np.abs(self.values)))

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values)

    def __add__(self, other):
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values + other.values)

    def __sub__(self, other):
        _check_same_grid(self, other)
        return ScalarField(self.grid, self.values - other.values)

    def __mul__(self, c: float) -> "ScalarField":
        return ScalarField(self.grid, self.values * float(c))

    __rmul__ = __mul__


def _check_same_grid(a: ScalarField, b: ScalarField):
    if not a.grid.compatible(b.grid):
        raise GridMismatch("fields live on different grids")


def sample(expr: Callable[[float], float], grid: Grid) -> ScalarField:
    """Evaluate a pointwise expression at every node."""
    try:
        vals = np.asarray(expr(grid.nodes), dtype=float)
        if vals.shape != grid.nodes.shape:
            raise TypeError
    except Exception:
        vals = np.array([float(expr(x)) for x in grid.nodes])
    if not np.all(np.isfinite(vals)):
        raise DomainError("expression is not finite at some node")
    return ScalarField(grid, vals)


def constant_field(grid: Grid, c: float) -> ScalarField:
    return ScalarField(grid, np.full(grid.n_nodes, float(c)))


def zero_field(grid: Grid) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.n_nodes))


def integrate(field: ScalarField, grid: Grid | None = None) -> float:
    """Quadrature of the field over the domain (volume measure on balls)."""
    if grid is not None and not field.grid.compatible(grid):
        raise GridMismatch("field does not live on the given grid")
    return float(np.dot(field.grid.quad_weights, field.values))


def dirichlet_values(u: ScalarField) -> NDArray[np.float64]:
    """Copy of the nodal values with boundary entries replaced by 0."""
    v = u.values.copy()
    for i in u.grid.boundary_indices:
        v[i] = 0.0
    return v


def apply_laplacian(u: ScalarField, bc: BoundaryCondition) -> ScalarField:
    """Discrete Laplacian of u.

    Dirichlet: boundary values are taken as 0 and boundary rows return 0.
    Neumann: every node carries a stencil row; zero normal derivative enters
    through the dropped boundary face (ghost reflection).
    """
    g = u.grid
    v = dirichlet_values(u) if bc is DIRICHLET else u.values
    vm = np.zeros_like(v)
    vm[1:] = v[:-1]
    vp = np.zeros_like(v)
    vp[:-1] = v[1:]
    out = g.lower * (vm - v) + g.upper * (vp - v)
    if bc is DIRICHLET:
        for i in g.boundary_indices:
            out[i] = 0.0
    return ScalarField(g, out)


def gradient_energy(u: ScalarField, bc: BoundaryCondition) -> float:
    """Face-based quadrature of |grad u|^2, the form whose Euler-Lagrange
    operator is exactly the discrete Laplacian above."""
    g = u.grid
    v = dirichlet_values(u) if bc is DIRICHLET else u.values
    du = np.diff(v)
    return float(np.dot(g.faces, du * du) / g.h)
