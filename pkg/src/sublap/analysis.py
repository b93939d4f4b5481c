"""Positivity classification, dead-core detection, exponent sweeps, and the
quadratic-barrier dead-core prediction."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (
    DIRICHLET,
    NEUMANN,
    BoundaryCondition,
    Grid,
    ScalarField,
    integrate,
)
from .linalg import linearized_eigenvalue, operator_norm_S
from .nonlinear import SolveResult, SolverOptions, ground_state, positive_power
from .oracles import barrier_field, deadcore_constant


class AnalysisError(ValueError):
    pass


class Kind(enum.Enum):
    TRIVIAL = "trivial"
    DEAD_CORE = "dead_core"
    POSITIVE_NOT_STRONG = "positive_not_strong"
    STRONGLY_POSITIVE = "strongly_positive"


@dataclass(frozen=True)
class Thresholds:
    """Relative classifier tolerances, one order above solver tolerance.

    deadcore_min_nodes / deadcore_min_extent: a below-threshold run counts as
    a dead core only if it spans at least 3 nodes AND a fixed fraction of the
    domain; degenerate (flat) boundary contact produces below-threshold ramps
    whose physical length shrinks with the threshold, and the extent test
    keeps those out.
    """

    trivial: float = 1e-10
    deadcore: float = 1e-7
    positive: float = 1e-8
    derivative: float = 1e-6
    uniqueness: float = 1e-6
    deadcore_min_nodes: int = 3
    deadcore_min_extent: float = 0.02
    scale: float = 1.0


DEFAULT_THRESHOLDS = Thresholds()


@dataclass
class Classification:
    kind: Kind
    regions: list[tuple[int, int]]
    min_interior: float
    boundary_derivatives: tuple[float, ...]
    norm_inf: float


def _outward_derivatives(u: ScalarField) -> tuple[float, ...]:
    """One-sided second-order normal derivatives at the boundary nodes."""
    g = u.grid
    v = u.values
    h = g.h
    right = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    if g.is_radial:
        return (right,)
    left = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
    return (-left, right)  # outward normal points away from the domain


def _deadcore_runs(below: np.ndarray, grid: Grid, th: Thresholds):
    """Maximal below-threshold runs that qualify as dead-core regions."""
    regions = []
    n = len(below)
    i = 0
    while i < n:
        if not below[i]:
            i += 1
            continue
        j = i
        while j + 1 < n and below[j + 1]:
            j += 1
        length = (j - i) * grid.h
        if j - i + 1 >= th.deadcore_min_nodes and length >= th.deadcore_min_extent * grid.diameter:
            regions.append((i, j))
        i = j + 1
    return regions


def classify(
    u: ScalarField,
    bc: BoundaryCondition,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> Classification:
    """Sort a nonnegative state into trivial / dead core / strongly positive /
    positive-but-not-strong.

    Strong positivity is the discrete reading of the usual cones: Dirichlet
    needs strictly negative outward derivatives at the boundary, Neumann
    needs a positive minimum over the closed domain.
    """
    v = u.values
    if float(np.min(v)) < -1e-12 * max(1.0, u.norm_inf()):
        raise AnalysisError("field has negative values; classify expects u >= 0")
    norm = u.norm_inf()
    g = u.grid
    th = thresholds
    if norm <= th.trivial * max(1.0, th.scale):
        return Classification(Kind.TRIVIAL, [], 0.0, (), norm)

    # dead-core scan runs over non-boundary nodes
    inner = v[1:-1] if not g.is_radial else v[:-1]
    offset = 1 if not g.is_radial else 0
    below = inner <= th.deadcore * norm
    regions = [
        (i + offset, j + offset) for (i, j) in _deadcore_runs(below, g, th)
    ]
    min_interior = float(np.min(inner))
    derivs = _outward_derivatives(u)
    if regions:
        return Classification(Kind.DEAD_CORE, regions, min_interior, derivs, norm)

    if bc is DIRICHLET:
        slope_floor = th.derivative * norm / g.diameter
        strong = bool(
            np.all(inner > 0) and all(d <= -slope_floor for d in derivs)
        )
    else:
        strong = bool(np.min(v) > th.positive * norm)
    if strong:
        return Classification(Kind.STRONGLY_POSITIVE, [], min_interior, derivs, norm)
    return Classification(Kind.POSITIVE_NOT_STRONG, [], min_interior, derivs, norm)


def power_transform(u: ScalarField, q: float) -> ScalarField:
    """The concave substitution v = u^(1-q)/(1-q) that linearizes the
    comparison structure of the problem."""
    if not (0.0 < q < 1.0):
        raise AnalysisError("q must be in (0, 1)")
    return ScalarField(u.grid, positive_power(u.values, 1.0 - q) / (1.0 - q))


@dataclass
class UniquenessReport:
    max_gap: float
    consistent: bool


def uniqueness_check(
    u1: ScalarField,
    u2: ScalarField,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> UniquenessReport:
    """Gap between two candidate positive solutions of the same instance; the
    uniqueness theory says consistent solvers must agree."""
    for u in (u1, u2):
        s = u.grid.unknown_slice(DIRICHLET)
        if not np.all(u.values[s] > 0):
            raise AnalysisError("uniqueness check expects interior-positive fields")
    gap = float(np.max(np.abs(u1.values - u2.values)))
    scale = max(u1.norm_inf(), u2.norm_inf())
    return UniquenessReport(gap, bool(gap <= thresholds.uniqueness * scale))


# ---------------------------------------------------------------------------
# exponent sweep


@dataclass
class SweepPoint:
    q: float
    kind: Kind
    norm_inf: float
    min_u: float
    energy: float
    gamma1: Optional[float]
    converged: bool


@dataclass
class SweepReport:
    points: list[SweepPoint]
    q_hat: Optional[float]
    interval_ok: bool


def _solve_and_classify(q, a, bc, opts, thresholds) -> SweepPoint:
    res = ground_state(q, a, bc, opts)
    cls = classify(res.u, bc, thresholds)
    res.classification = cls
    gamma = None
    if cls.kind is not Kind.TRIVIAL:
        try:
            gamma = linearized_eigenvalue(q, res.u, a, bc).value
        except Exception:
            gamma = None
    return SweepPoint(
        q=q,
        kind=cls.kind,
        norm_inf=res.u.norm_inf(),
        min_u=float(np.min(res.u.values)),
        energy=res.energy,
        gamma1=gamma,
        converged=res.converged,
    )


def positivity_sweep(
    a: ScalarField,
    bc: BoundaryCondition,
    q_grid: Sequence[float],
    opts: SolverOptions | None = None,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
    refine_tol: float = 1e-3,
) -> SweepReport:
    """Ground state + classification across exponents, with bisection
    refinement of the onset of strong positivity.

    The theory predicts the strongly positive exponents form an interval
    with right endpoint 1; interval_ok reports whether the sweep saw that
    structure (violations are surfaced, never repaired).
    """
    qs = sorted(float(q) for q in q_grid)
    if not qs or not all(0.0 < q < 1.0 for q in qs):
        raise AnalysisError("q grid must be nonempty and inside (0, 1)")
    if opts is None:
        opts = SolverOptions()
    points = [_solve_and_classify(q, a, bc, opts, thresholds) for q in qs]

    strong = [pt.kind is Kind.STRONGLY_POSITIVE for pt in points]
    if any(strong):
        first = strong.index(True)
        interval_ok = all(strong[first:])
        q_hat = points[first].q
        if first > 0 and interval_ok:
            lo, hi = points[first - 1].q, points[first].q
            while hi - lo > refine_tol:
                mid = 0.5 * (lo + hi)
                pt = _solve_and_classify(mid, a, bc, opts, thresholds)
                if pt.kind is Kind.STRONGLY_POSITIVE:
                    hi = mid
                else:
                    lo = mid
            q_hat = hi
        elif not interval_ok:
            # conservative: report the largest transition
            last_bad = max(i for i, s in enumerate(strong) if not s)
            q_hat = points[last_bad + 1].q if last_bad + 1 < len(points) else None
    else:
        interval_ok = True
        q_hat = None
    return SweepReport(points, q_hat, interval_ok)


# ---------------------------------------------------------------------------
# dead cores


@dataclass
class DeadcorePrediction:
    constant: float
    threshold: float
    condition_met: bool
    barrier: ScalarField
    a_floor: float
    ball: tuple[float, float]


def deadcore_predict(
    a: ScalarField, ball: tuple[float, float], q: float, grid: Grid
) -> DeadcorePrediction:
    """Quadratic-barrier test: if min a^- over the ball B_R(x0) reaches
    ||S|| ||a^+||_inf / (R^2 C_{N,q}), every solution vanishes at the center.

    The returned barrier w dominates any solution on the ball whenever the
    condition holds (discrete comparison up to truncation error).
    """
    center, radius = ball
    if radius <= 0:
        raise AnalysisError("ball radius must be positive")
    mask = np.abs(grid.nodes - center) <= radius
    if not mask.any():
        raise AnalysisError("ball contains no nodes")
    if np.any(a.values[mask] > 0):
        raise AnalysisError("ball must avoid the positivity region of the weight")
    dim = grid.geometry.dim if grid.is_radial else 1
    c = deadcore_constant(dim, q)
    s_norm = operator_norm_S(grid)
    apos_max = float(np.max(np.clip(a.values, 0.0, None)))
    threshold = s_norm * apos_max / (radius**2 * c)
    a_floor = float(np.min(np.clip(-a.values[mask], 0.0, None)))
    w = barrier_field(center, a_floor, q, grid) if a_floor > 0 else ScalarField(
        grid, np.zeros(grid.n_nodes)
    )
    return DeadcorePrediction(
        constant=c,
        threshold=threshold,
        condition_met=bool(a_floor >= threshold),
        barrier=w,
        a_floor=a_floor,
        ball=(center, radius),
    )


@dataclass
class DeltaSweepRow:
    delta: float
    vanishes: bool
    max_on_region: float
    norm_inf: float
    converged: bool


@dataclass
class DeltaSweepReport:
    rows: list[DeltaSweepRow]
    delta_first_deadcore: Optional[float]
    region_nodes: int


def eroded_region(grid: Grid, member: np.ndarray, rho: float) -> np.ndarray:
    """Nodes of the region at distance more than rho from its boundary
    (two-pass distance transform; the domain boundary bounds the region
    wherever the region reaches it)."""
    n = len(member)
    big = np.inf
    dist = np.where(member, big, 0.0)
    if member[0]:
        dist[0] = 0.0  # region touches the domain boundary
    if member[-1]:
        dist[-1] = 0.0
    for i in range(1, n):
        dist[i] = min(dist[i], dist[i - 1] + grid.h)
    for i in range(n - 2, -1, -1):
        dist[i] = min(dist[i], dist[i + 1] + grid.h)
    return member & (dist > rho)


def deadcore_delta_sweep(
    b1: ScalarField,
    b2: ScalarField,
    q_bar: float,
    rho: float,
    deltas: Sequence[float],
    bc: BoundaryCondition,
    opts: SolverOptions | None = None,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> DeltaSweepReport:
    """Scaled-negative-part sweep a_delta = b1 - delta b2: report the first
    delta at which every nontrivial solution found vanishes on the eroded
    set of {b2 > 0}."""
    from .weights import _check_split_parts

    _check_split_parts(b1, b2)
    dl = [float(d) for d in deltas]
    if any(d2 <= d1 for d1, d2 in zip(dl, dl[1:])):
        raise AnalysisError("delta list must be strictly increasing")
    if opts is None:
        opts = SolverOptions()
    g = b1.grid
    member = b2.values > 0
    region = eroded_region(g, member, rho)
    idx = np.where(region)[0]
    rows = []
    first = None
    for d in dl:
        a = ScalarField(g, b1.values - d * b2.values)
        res = ground_state(q_bar, a, bc, opts)
        norm = res.u.norm_inf()
        if len(idx) == 0:
            van, mx = True, 0.0  # empty region: trivially vanished
        elif norm == 0.0:
            van, mx = False, 0.0  # trivial solution carries no dead core
        else:
            mx = float(np.max(res.u.values[idx]))
            van = bool(mx <= thresholds.deadcore * norm)
        rows.append(DeltaSweepRow(d, van, mx if len(idx) else 0.0, norm, res.converged))
        if van and first is None:
            first = d
    return DeltaSweepReport(rows, first, int(len(idx)))
