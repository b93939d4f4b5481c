"""Closed-form reference solutions and an independent brute-force minimizer.

Everything here is deliberately self-contained: the brute-force ground state
assembles its own dense operator and runs plain projected gradient descent,
so it shares no solver path with the production minimizer it cross-checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import (
    DIRICHLET,
    BoundaryCondition,
    Grid,
    Line,
    ScalarField,
    zero_field,
)
from .weights import CosineWeight, eval_weight


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OraclePair:
    a: ScalarField
    u: ScalarField
    q: float
    meta: str


def _require_zero_pi(grid: Grid):
    geo = grid.geometry
    if not isinstance(geo, Line) or abs(geo.x_lo) > 1e-12 or abs(geo.x_hi - math.pi) > 1e-12:
        raise OracleError("this reference lives on the interval [0, pi]")


def exact_cosine_pair(q: float, grid: Grid) -> OraclePair:
    """Weight/solution pair with u = sin^p(x)/p, p = 2/(1-q), on [0, pi].

    u is positive inside but has vanishing one-sided derivatives at both
    endpoints (p > 2), so it solves both boundary-value problems without
    being strongly positive.
    """
    _require_zero_pi(grid)
    w = CosineWeight(q)
    p = w.power
    a = eval_weight(w, grid)
    s = np.clip(np.sin(grid.nodes), 0.0, None)
    u = ScalarField(grid, s**p / p)
    return OraclePair(a, u, q, f"cosine family, q={q}, power={p}")


def poisson_reference(grid: Grid) -> ScalarField:
    """The Poisson solution x^2 - pi x + 1 - cos 2x for the q = 1/2 cosine
    weight: negative throughout (0, pi) even though a positive solution of
    the nonlinear problem exists."""
    _require_zero_pi(grid)
    x = grid.nodes
    return ScalarField(grid, x**2 - math.pi * x + 1.0 - np.cos(2.0 * x))


def deadcore_constant(dim: int, q: float) -> float:
    """(1-q)^2 / (2 (N(1-q) + 2q)), the comparison constant of the quadratic
    dead-core barrier."""
    if not (0.0 < q < 1.0):
        raise OracleError("q must be in (0, 1)")
    return (1.0 - q) ** 2 / (2.0 * (dim * (1.0 - q) + 2.0 * q))


def barrier_field(center: float, a_floor: float, q: float, grid: Grid) -> ScalarField:
    """Barrier w(x) = (C a_floor |x - center|^2)^(1/(1-q)); w(center) = 0 and
    Lap w = a_floor w^q exactly, so it dominates any solution entering the
    negativity ball."""
    if a_floor <= 0:
        raise OracleError("a_floor must be positive")
    dim = grid.geometry.dim if grid.is_radial else 1
    c = deadcore_constant(dim, q)
    s2 = (grid.nodes - center) ** 2
    return ScalarField(grid, (c * a_floor * s2) ** (1.0 / (1.0 - q)))


def _dense_neg_laplacian(grid: Grid, bc: BoundaryCondition):
    """Dense -Lap on the unknown nodes, assembled from the flux coefficients."""
    s = grid.unknown_slice(bc)
    idx = np.arange(grid.n_nodes)[s]
    n = len(idx)
    A = np.zeros((n, n))
    for k, i in enumerate(idx):
        A[k, k] = grid.lower[i] + grid.upper[i]
        if k > 0:
            A[k, k - 1] = -grid.lower[i]
        if k + 1 < n:
            A[k, k + 1] = -grid.upper[i]
    return A, s


def brute_force_ground_state(
    q: float,
    a: ScalarField,
    bc: BoundaryCondition,
    starts: int = 64,
    tol: float = 1e-13,
    max_iter: int = 1200,
    seed: int = 20210405,
) -> ScalarField:
    """Exhaustive multi-start projected gradient descent on the energy.

    Small grids only (the operator is dense on purpose).  Uses spectral
    (Barzilai-Borwein) steps with a nonmonotone Armijo safeguard and returns
    the lowest-energy iterate over all starts, including the zero field.
    """
    g = a.grid
    if g.n_interior > 63:
        raise OracleError("brute-force oracle is restricted to n_interior <= 63")
    A, s = _dense_neg_laplacian(g, bc)
    w = g.quad_weights[s]
    av = a.values[s]
    n = len(av)

    def energy(u):
        return 0.5 * np.dot(u, A @ u * w) - np.dot(w * av, np.abs(u) ** (q + 1.0)) / (
            q + 1.0
        )

    def grad(u):
        # W-metric gradient of the energy: -Lap u - a (u+)^q
        return A @ u - av * np.clip(u, 0.0, None) ** q

    def run(u):
        e_hist = [energy(u)]
        gprev = None
        uprev = None
        step = 1.0
        stalled = 0
        for _ in range(max_iter):
            gr = grad(u)
            if uprev is not None:
                du = u - uprev
                dg = gr - gprev
                denom = np.dot(w * du, dg)
                if denom > 0:
                    step = np.dot(w * du, du) / denom
                step = float(np.clip(step, 1e-10, 1e10))
            for _bt in range(60):
                cand = np.clip(u - step * gr, 0.0, None)
                ec = energy(cand)
                if ec <= max(e_hist[-5:]) - 1e-4 / max(step, 1e-30) * np.dot(
                    w * (cand - u), cand - u
                ):
                    break
                step *= 0.5
            else:
                break
            uprev, gprev = u, gr
            u = cand
            stalled = stalled + 1 if abs(e_hist[-1] - ec) <= 1e-16 * max(1.0, abs(ec)) else 0
            e_hist.append(ec)
            if np.max(np.abs(u - uprev)) <= tol * max(1.0, np.max(np.abs(u))):
                break
            if stalled >= 60:  # energy flat to round-off: iterates are done
                break
        return u, energy(u)

    best_u = np.zeros(n)
    best_e = 0.0
    scale = max(1.0, float(np.max(np.abs(av))))
    for k in range(starts):
        rng = np.random.default_rng((seed, k))
        u0 = np.abs(rng.standard_normal(n)) * rng.uniform(0.05, 2.0) * scale
        u, e = run(u0)
        if e < best_e:
            best_e, best_u = e, u
    out = np.zeros(g.n_nodes)
    out[s] = best_u
    return ScalarField(g, out)
