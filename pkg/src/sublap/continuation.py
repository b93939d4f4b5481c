"""Branch tracing in the exponent toward q = 1 and the limit-amplitude law.

As q -> 1- the problem degenerates into the weighted eigenproblem; scaled by
mu^(1/(1-q)) the positive branch approaches t* phi, where phi is the
principal eigenfunction and

    t* = exp( - quad(a phi^2 log phi) / quad(a phi^2) ).

Branches with mu > 1 collapse to zero, mu < 1 blow up, and mu = 1 converge
to t* phi directly; trace_branch verifies whichever regime applies.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (
    NEUMANN,
    BoundaryCondition,
    ScalarField,
    integrate,
)
from .linalg import linearized_eigenvalue, principal_eigenpair
from .nonlinear import SolverOptions, ground_state


class ContinuationError(RuntimeError):
    pass


class DegenerateDenominator(ContinuationError):
    pass


class Regime(enum.Enum):
    TO_ZERO = "to_zero"
    TO_LIMIT_PROFILE = "to_limit_profile"
    TO_INFINITY = "to_infinity"


DEFAULT_Q_LIST = (0.80, 0.85, 0.90, 0.95, 0.975, 0.99)
EXPONENT_CAP = 1e300


def limit_amplitude(a: ScalarField, phi: ScalarField) -> float:
    """t^* for the scaled branch; nodes with phi ~ 0 contribute nothing to
    the numerator (the phi^2 log phi -> 0 limit)."""
    pv = phi.values
    if np.any(pv < 0):
        raise ContinuationError("phi must be nonnegative")
    p2 = pv * pv
    den = float(np.dot(a.grid.quad_weights, a.values * p2))
    scale = float(np.dot(a.grid.quad_weights, np.abs(a.values) * p2))
    if abs(den) <= 1e-12 * max(scale, 1e-300):
        raise DegenerateDenominator("quad(a phi^2) vanishes")
    logs = np.zeros_like(pv)
    big = pv > 1e-300
    logs[big] = np.log(pv[big])
    num = float(np.dot(a.grid.quad_weights, a.values * p2 * logs))
    return math.exp(-num / den)


def regime_classify(mu: float, tol: float = 1e-8) -> Regime:
    if mu <= 0:
        raise ContinuationError("mu must be positive")
    if abs(mu - 1.0) <= tol:
        return Regime.TO_LIMIT_PROFILE
    return Regime.TO_ZERO if mu > 1.0 else Regime.TO_INFINITY


def scale_weight_to_unit_eigenvalue(
    a: ScalarField, bc: BoundaryCondition
) -> tuple[ScalarField, float]:
    """Replace a by mu(a) * a, which has principal eigenvalue exactly 1."""
    ep = principal_eigenpair(a, bc)
    return a * ep.mu, ep.mu


def _power_scale(mu: float, expo: float) -> tuple[float, bool]:
    """mu**expo with overflow capping."""
    logv = expo * math.log(mu)
    if logv > math.log(EXPONENT_CAP):
        return EXPONENT_CAP, True
    if logv < -math.log(EXPONENT_CAP):
        return 1.0 / EXPONENT_CAP, True
    return math.exp(logv), False


@dataclass
class BranchPoint:
    q: float
    norm_inf: float
    min_u: float
    energy: float
    gamma1: Optional[float]
    scaled_distance: Optional[float]
    converged: bool
    overflow: bool


@dataclass
class BranchData:
    points: list[BranchPoint]
    mu: float
    amplitude: float  # t*
    regime: Regime
    tail_monotone: bool  # scaled distance nonincreasing over the last points
    diagnostics: dict = field(default_factory=dict)


def trace_branch(
    a: ScalarField,
    bc: BoundaryCondition,
    q_list: Sequence[float] = DEFAULT_Q_LIST,
    opts: SolverOptions | None = None,
) -> BranchData:
    """March the positive branch through q_list (ascending toward 1).

    Each solve warm-starts from the previous solution rescaled by the
    predicted factor mu^-(1/(1-q_next) - 1/(1-q_prev)); the asymptote
    mu^(-1/(1-q)) t* phi is also offered as a start.  Records per point the
    scaled distance ||mu^(1/(1-q)) u - t* phi||_inf and the linearized
    stability eigenvalue.
    """
    qs = sorted(float(q) for q in q_list)
    if not qs or not all(0.0 < q < 1.0 for q in qs):
        raise ContinuationError("q_list must lie inside (0, 1)")
    if opts is None:
        opts = SolverOptions()
    if bc is NEUMANN and integrate(a) >= 0:
        raise ContinuationError("Neumann branch needs a weight with negative integral")
    ep = principal_eigenpair(a, bc)
    mu, phi = ep.mu, ep.phi
    tstar = limit_amplitude(a, phi)

    points: list[BranchPoint] = []
    prev_u: Optional[ScalarField] = None
    prev_q: Optional[float] = None
    for q in qs:
        hints = []
        amp, ovf_a = _power_scale(mu, -1.0 / (1.0 - q))
        hints.append(phi * (tstar * amp))
        if prev_u is not None and prev_u.norm_inf() > 0:
            factor, ovf_b = _power_scale(
                mu, -(1.0 / (1.0 - q) - 1.0 / (1.0 - prev_q))
            )
            if not ovf_b:
                hints.append(prev_u * factor)
        res = ground_state(q, a, bc, opts, extra_starts=hints)
        scaled, ovf_s = _power_scale(mu, 1.0 / (1.0 - q))
        overflow = ovf_a or ovf_s
        if overflow:
            dist = None
        else:
            dist = float(
                np.max(np.abs(scaled * res.u.values - tstar * phi.values))
            )
        gamma = None
        if res.u.norm_inf() > 0:
            try:
                gamma = linearized_eigenvalue(q, res.u, a, bc).value
            except Exception:
                gamma = None
        points.append(
            BranchPoint(
                q=q,
                norm_inf=res.u.norm_inf(),
                min_u=float(np.min(res.u.values)),
                energy=res.energy,
                gamma1=gamma,
                scaled_distance=dist,
                converged=res.converged,
                overflow=overflow,
            )
        )
        prev_u, prev_q = res.u, q

    tail = [p.scaled_distance for p in points[-3:] if p.scaled_distance is not None]
    tail_monotone = all(b <= 1.1 * a_ for a_, b in zip(tail, tail[1:]))
    return BranchData(
        points=points,
        mu=mu,
        amplitude=tstar,
        regime=regime_classify(mu),
        tail_monotone=tail_monotone,
        diagnostics={"eigen_residual": ep.residual_inf},
    )
