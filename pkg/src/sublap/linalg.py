"""Tridiagonal solves, the Poisson solution operator, and eigenvalue tools.

The weighted eigenproblem  -Lap phi = mu a phi  with sign-changing a is solved
by bisection on the inertia of the symmetric pencil K - mu M, where
K = W (-Lap_h) is the stiffness matrix and M = W diag(a) (W = quadrature
weights).  By Sylvester's law the number of negative LDL pivots of K - mu M
counts the positive pencil eigenvalues below mu, so the principal eigenvalue
is the unique 0 -> 1 inertia transition; the eigenfunction is recovered by
generalized inverse iteration.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

from .domain import (
    DIRICHLET,
    NEUMANN,
    BoundaryCondition,
    Grid,
    GridMismatch,
    ScalarField,
    apply_laplacian,
    constant_field,
    integrate,
)


class LinalgError(RuntimeError):
    pass


class UnsupportedBC(LinalgError):
    pass


class NoPositiveEigenvalue(LinalgError):
    pass


class NonconvergedBisection(LinalgError):
    pass


def solve_tridiag(dl, d, du, rhs):
    """Solve the tridiagonal system (Thomas-class elimination via LAPACK).

    dl[i] couples row i to i-1, du[i] couples row i to i+1; dl[0] and du[-1]
    are ignored.
    """
    n = len(d)
    ab = np.zeros((3, n))
    ab[0, 1:] = du[:-1]
    ab[1, :] = d
    ab[2, :-1] = dl[1:]
    return solve_banded((1, 1), ab, rhs, check_finite=False)


def neg_laplacian_bands(grid: Grid, bc: BoundaryCondition):
    """Bands (dl, d, du) of -Lap_h restricted to the unknown nodes."""
    s = grid.unknown_slice(bc)
    lo, up = grid.lower[s], grid.upper[s]
    d = lo + up
    dl = -lo
    du = -up
    return dl.copy(), d.copy(), du.copy(), s


def stiffness_bands(grid: Grid, bc: BoundaryCondition):
    """Symmetric K = W(-Lap_h) on the unknown nodes: (diag, off-diagonal)."""
    s = grid.unknown_slice(bc)
    w = grid.quad_weights[s]
    kd = w * (grid.lower[s] + grid.upper[s])
    ke = -grid.faces[s.start : s.stop - 1] / grid.h
    return kd, ke, w, s


def solve_poisson(f: ScalarField, bc: BoundaryCondition = DIRICHLET) -> ScalarField:
    """u = S(f): solve -Lap u = f with u = 0 on the boundary."""
    if bc is not DIRICHLET:
        raise UnsupportedBC("the Poisson solution operator is Dirichlet-only")
    g = f.grid
    dl, d, du, s = neg_laplacian_bands(g, DIRICHLET)
    x = solve_tridiag(dl, d, du, f.values[s])
    out = np.zeros(g.n_nodes)
    out[s] = x
    return ScalarField(g, out)


def operator_norm_S(grid: Grid) -> float:
    """sup-norm of the Poisson operator, = ||S(1)||_inf since S has a
    nonnegative kernel (M-matrix inverse)."""
    return solve_poisson(constant_field(grid, 1.0)).norm_inf()


@dataclass
class EigenPair:
    mu: float
    phi: ScalarField
    residual_inf: float
    diagnostics: dict = field(default_factory=dict)


def _negative_pivots(kd, ke, m, mu):
    """Negative-pivot count of the LDL factorization of diag(kd - mu*m) + off(ke)."""
    t = kd - mu * m
    count = 0
    p = t[0]
    if p == 0.0:
        p = -1e-300
    if p < 0:
        count += 1
    for i in range(1, len(t)):
        p = t[i] - ke[i - 1] * ke[i - 1] / p
        if p == 0.0:
            p = -1e-300
        if p < 0:
            count += 1
    return count


def _inverse_iteration(kd, ke, m, mu, sweeps=8):
    n = len(kd)
    d = kd - mu * m
    dl = np.zeros(n)
    du = np.zeros(n)
    dl[1:] = ke
    du[:-1] = ke
    x = np.ones(n)
    for shift_bump in range(4):
        try:
            for _ in range(sweeps):
                x = solve_tridiag(dl, d, du, m * x)
                nrm = np.max(np.abs(x))
                if not np.isfinite(nrm) or nrm == 0.0:
                    raise FloatingPointError
                x /= nrm
            break
        except (FloatingPointError, np.linalg.LinAlgError, ValueError):
            # exactly singular shift: nudge mu by one ulp-scale step
            d = kd - mu * (1.0 + 1e-13 * (shift_bump + 1)) * m
            x = np.ones(n)
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    return x


def principal_eigenpair(
    a: ScalarField,
    bc: BoundaryCondition,
    tol: float = 1e-12,
    eps0: float = 1e-8,
    resid_tol: float | None = None,
) -> EigenPair:
    """Smallest mu > 0 with -Lap phi = mu a phi and phi > 0 inside.

    phi is normalized by quadrature(phi^2) = 1.  Neumann weights must satisfy
    integral(a) < 0 (otherwise mu = 0, with constant eigenfunction, is the
    only nonnegative principal value and an error is raised).
    """
    g = a.grid
    if not np.any(a.values > 0):
        raise NoPositiveEigenvalue("weight is nonpositive everywhere")
    if bc is NEUMANN and integrate(a) >= 0:
        raise NoPositiveEigenvalue(
            "Neumann principal eigenvalue requires a weight with negative integral"
        )
    kd, ke, w, s = stiffness_bands(g, bc)
    m = w * a.values[s]

    lo = eps0
    if _negative_pivots(kd, ke, m, lo) != 0:
        raise NoPositiveEigenvalue(
            f"inertia already positive at mu = {lo:g}; no positive principal eigenvalue"
        )
    hi = 1.0
    while _negative_pivots(kd, ke, m, hi) == 0:
        hi *= 2.0
        if hi > 2.0**200:
            raise NonconvergedBisection("no inertia transition found below 2^200")
    diagnostics = {"bracket": (lo, hi)}
    while hi - lo > tol * hi:
        mid = 0.5 * (lo + hi)
        if _negative_pivots(kd, ke, m, mid) == 0:
            lo = mid
        else:
            hi = mid
    mu = 0.5 * (lo + hi)
    jump = _negative_pivots(kd, ke, m, hi * (1.0 + 1e-9))
    diagnostics["inertia_above"] = jump
    if jump > 1:
        warnings.warn(
            f"inertia jumps 0 -> {jump} across the bracket; eigenvalue may be multiple",
            RuntimeWarning,
        )

    x = _inverse_iteration(kd, ke, m, mu)
    # Rayleigh-quotient polish: sharper than the bisection midpoint
    kx = kd * x
    kx[:-1] += ke * x[1:]
    kx[1:] += ke * x[:-1]
    rq = float(np.dot(x, kx) / np.dot(x, m * x))
    if lo <= rq <= hi:
        mu = rq
    phi_vals = np.zeros(g.n_nodes)
    phi_vals[s] = x
    phi = ScalarField(g, phi_vals)
    nrm = integrate(phi.with_values(phi.values**2))
    if nrm <= 0:
        raise NonconvergedBisection("inverse iteration produced a degenerate vector")
    phi = phi * (1.0 / np.sqrt(nrm))

    interior = phi.values[s]
    if np.min(interior) <= 0:
        raise NonconvergedBisection(
            "eigenfunction is not positive at all interior nodes"
        )
    res = apply_laplacian(phi, bc).values + mu * a.values * phi.values
    res[~_row_mask(g, bc)] = 0.0
    residual_inf = float(np.max(np.abs(res)))
    if resid_tol is None:
        # round-off floor: elimination noise scales with the stencil magnitude
        op_scale = float(np.max(g.lower + g.upper)) + abs(mu) * np.max(
            np.abs(a.values)
        )
        resid_tol = max(1e-9, 500.0 * np.finfo(float).eps * op_scale)
    diagnostics["resid_tol"] = resid_tol
    if residual_inf > resid_tol * phi.norm_inf():
        raise NonconvergedBisection(
            f"eigen residual {residual_inf:.3e} exceeds {resid_tol:.1e} * ||phi||"
        )
    return EigenPair(mu, phi, residual_inf, diagnostics)


def _row_mask(grid: Grid, bc: BoundaryCondition):
    mask = np.zeros(grid.n_nodes, dtype=bool)
    mask[grid.unknown_slice(bc)] = True
    return mask


@dataclass
class LinearizedEigenvalue:
    value: float
    clamp_rel: float
    clamped_nodes: int


def linearized_eigenvalue(
    q: float,
    u: ScalarField,
    a: ScalarField,
    bc: BoundaryCondition,
    clamp_rel: float = 1e-6,
) -> LinearizedEigenvalue:
    """Smallest eigenvalue of -Lap - q a u^{q-1} (the linearization at u).

    u^{q-1} is singular where u vanishes, so the potential uses u clamped
    from below at clamp_rel * ||u||_inf; the clamp is reported and is inactive
    for strongly positive u.
    """
    if not u.grid.compatible(a.grid):
        raise GridMismatch("u and a live on different grids")
    unorm = u.norm_inf()
    if unorm == 0.0:
        raise LinalgError("linearization at u = 0 is undefined")
    g = u.grid
    kd, ke, w, s = stiffness_bands(g, bc)
    floor = clamp_rel * unorm
    uu = np.maximum(u.values[s], floor)
    clamped = int(np.sum(u.values[s] < floor))
    v = q * a.values[s] * uu ** (q - 1.0)
    # symmetrize the pencil (K - W V) phi = gamma W phi by W^{-1/2} scaling
    sq = np.sqrt(w)
    d_sym = kd / w - v
    e_sym = ke / (sq[:-1] * sq[1:])
    gamma = eigh_tridiagonal(
        d_sym, e_sym, select="i", select_range=(0, 0), eigvals_only=True
    )[0]
    return LinearizedEigenvalue(float(gamma), clamp_rel, clamped)


def restricted_principal_mode(grid: Grid, i_lo: int, i_hi: int):
    """Principal Dirichlet eigenpair of -Lap on the node range [i_lo, i_hi].

    Returns (lam, phi_vals) with phi normalized to max = 1 and extended by
    zero outside the range.  Used for subsolution construction on balls.
    """
    if i_hi - i_lo < 2:
        raise LinalgError("eigenvalue window needs at least 3 nodes")
    if (i_lo == 0 and not grid.is_radial) or i_hi >= grid.n_nodes - 1:
        # domain boundary nodes cannot be eigen-unknowns
        raise LinalgError("range must not include a boundary node")
    w = grid.quad_weights[i_lo : i_hi + 1]
    kd = w * (grid.lower[i_lo : i_hi + 1] + grid.upper[i_lo : i_hi + 1])
    ke = -grid.faces[i_lo:i_hi] / grid.h
    m = w.copy()
    lo, hi = 1e-12, 1.0
    while _negative_pivots(kd, ke, m, hi) == 0:
        hi *= 2.0
        if hi > 2.0**200:
            raise NonconvergedBisection("no Dirichlet mode found")
    while hi - lo > 1e-13 * hi:
        mid = 0.5 * (lo + hi)
        if _negative_pivots(kd, ke, m, mid) == 0:
            lo = mid
        else:
            hi = mid
    lam = 0.5 * (lo + hi)
    x = _inverse_iteration(kd, ke, m, lam)
    x /= np.max(np.abs(x))
    if np.min(x) <= 0:
        raise NonconvergedBisection("restricted mode not positive")
    phi = np.zeros(grid.n_nodes)
    phi[i_lo : i_hi + 1] = x
    return lam, phi
