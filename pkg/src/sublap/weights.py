"""Built-in weight families a(x) and numerical checkers for the standing
hypotheses and the explicit radial existence conditions.

Families:
  CosineWeight(q)        a(x) = p^(1-2/p) (1 - p cos^2 x) on [0, pi] with
                         p = 2/(1-q); the instance with a closed-form positive
                         solution sin^p x / p.
  RadialSplitWeight      radial ball split at r_split into a one-signed core
                         and a one-signed shell (smooth power profiles).
  DeltaSplitWeight       a = plus_part - delta * minus_part with nonnegative,
                         disjointly supported parts.
  TableWeight            explicit nodal values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .domain import (
    DIRICHLET,
    DomainError,
    Grid,
    Line,
    Radial,
    ScalarField,
    integrate,
    sample,
    unit_sphere_area,
)
from . import linalg

omega_sphere = unit_sphere_area  # surface area of the unit sphere in R^N


class WeightError(ValueError):
    pass


@dataclass(frozen=True)
class CosineWeight:
    """The sign-changing cosine weight whose positive solution is known in
    closed form for exponent q: with p = 2/(1-q),

        a(x) = p^(1 - 2/p) (1 - p cos^2 x),   u(x) = sin^p(x) / p.
    """

    q: float

    def __post_init__(self):
        if not (0.0 < self.q < 1.0):
            raise WeightError(f"q must be in (0, 1), got {self.q}")

    @property
    def power(self) -> float:
        return 2.0 / (1.0 - self.q)

    def __call__(self, x):
        p = self.power
        return p ** (1.0 - 2.0 / p) * (1.0 - p * np.cos(x) ** 2)


@dataclass(frozen=True)
class RadialSplitWeight:
    """Radial weight, one sign in the core ball {r < r_split} and the other
    in the shell {r_split < r < R}.

    layout 'positive_core': a = +core in the ball, -shell outside.
    layout 'negative_core': a = -core in the ball, +shell outside.
    Core profile: amplitude * (1 - (r/r_split)^core_power) (flat near the
    center for large powers), shell profile:
    amplitude * ((r - r_split)/(R - r_split))^shell_power; both vanish at
    r_split, so a is continuous, and the shell is monotone in r.
    """

    layout: str
    core_amplitude: float
    shell_amplitude: float
    r_split: float
    core_power: float = 1.0
    shell_power: float = 1.0

    def __post_init__(self):
        if self.layout not in ("positive_core", "negative_core"):
            raise WeightError(f"unknown layout {self.layout!r}")
        if self.r_split <= 0:
            raise WeightError("r_split must be positive")
        if self.core_amplitude < 0 or self.shell_amplitude < 0:
            raise WeightError("amplitudes must be nonnegative")

    def evaluate(self, r, radius: float):
        if self.r_split >= radius:
            raise WeightError("r_split must be smaller than the ball radius")
        r = np.asarray(r, dtype=float)
        core = self.core_amplitude * np.clip(
            1.0 - (r / self.r_split) ** self.core_power, 0.0, None
        )
        shell = self.shell_amplitude * (
            np.clip((r - self.r_split) / (radius - self.r_split), 0.0, None)
            ** self.shell_power
        )
        sgn = 1.0 if self.layout == "positive_core" else -1.0
        return sgn * core - sgn * shell


@dataclass(frozen=True)
class DeltaSplitWeight:
    """a = plus_part - delta * minus_part, both parts nonnegative with
    disjoint supports (no node carries both)."""

    plus_part: "WeightSpec"
    minus_part: "WeightSpec"
    delta: float

    def __post_init__(self):
        if self.delta < 0:
            raise WeightError("delta must be nonnegative")


@dataclass(frozen=True)
class TableWeight:
    values: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))


WeightSpec = Union[
    CosineWeight, RadialSplitWeight, DeltaSplitWeight, TableWeight, Callable
]


def eval_weight(spec: WeightSpec, grid: Grid) -> ScalarField:
    """Evaluate a weight specification pointwise on the grid nodes."""
    if isinstance(spec, CosineWeight):
        geo = grid.geometry
        if not isinstance(geo, Line) or abs(geo.x_lo) > 1e-12 or abs(geo.x_hi - math.pi) > 1e-12:
            raise WeightError("the cosine family is defined on the interval [0, pi]")
        return sample(spec, grid)
    if isinstance(spec, RadialSplitWeight):
        if not isinstance(grid.geometry, Radial):
            raise WeightError("radial split weights need a radial grid")
        R = grid.geometry.radius
        return ScalarField(grid, spec.evaluate(grid.nodes, R))
    if isinstance(spec, DeltaSplitWeight):
        b1 = eval_weight(spec.plus_part, grid)
        b2 = eval_weight(spec.minus_part, grid)
        _check_split_parts(b1, b2)
        return ScalarField(grid, b1.values - spec.delta * b2.values)
    if isinstance(spec, TableWeight):
        if len(spec.values) != grid.n_nodes:
            raise WeightError(
                f"table has {len(spec.values)} values, grid has {grid.n_nodes} nodes"
            )
        return ScalarField(grid, np.array(spec.values))
    if callable(spec):
        return sample(spec, grid)
    raise WeightError(f"unknown weight spec {spec!r}")


def _check_split_parts(b1: ScalarField, b2: ScalarField):
    if np.any(b1.values < 0) or np.any(b2.values < 0):
        raise WeightError("split parts must be nonnegative")
    if np.any((b1.values > 0) & (b2.values > 0)):
        raise WeightError("split parts must have disjoint supports")


def bump_profile(x, lo: float, hi: float):
    """Smooth bump sin^2(pi t) supported exactly on [lo, hi]."""
    x = np.asarray(x, dtype=float)
    t = (x - lo) / (hi - lo)
    inside = (t > 0.0) & (t < 1.0)
    out = np.zeros_like(x)
    out[inside] = np.sin(np.pi * t[inside]) ** 2
    return out


def plateau_profile(x, lo: float, hi: float, ramp: float):
    """Trapezoidal plateau: 0 outside [lo, hi], 1 on [lo+ramp, hi-ramp]."""
    x = np.asarray(x, dtype=float)
    return np.clip(np.minimum((x - lo) / ramp, (hi - x) / ramp), 0.0, 1.0)


def split_crossover_delta(b1: ScalarField, b2: ScalarField) -> float:
    """The delta at which integral(b1 - delta b2) crosses zero."""
    i2 = integrate(b2)
    if i2 <= 0:
        raise WeightError("minus part integrates to zero")
    return integrate(b1) / i2


# ---------------------------------------------------------------------------
# hypothesis checkers


@dataclass
class IntegralCheck:
    value: float
    negative: bool


@dataclass
class DecayFitCheck:
    holds: Optional[bool]
    eta: Optional[float]
    rho0: float
    nodes_used: int


@dataclass
class BalanceCheck:
    holds: bool
    lhs: float
    rhs: float


@dataclass
class ConditionReport:
    """Numerical verdicts on the hypotheses used by the existence theory.

    integral               sign of the weight's integral (negative is the
                           Neumann necessary condition)
    positivity_components  number of connected components of {a > 0}
    inner_sphere           static flag: built-in families satisfy the inner
                           sphere regularity by construction
    source_strongly_pos    S(a) strictly positive inside with inward slope
    source_positive        S(a) > 0 at all interior nodes
    boundary_decay         fitted exponent eta of |a| <= C d(x)^eta near the
                           boundary, tested against eta > 1 - 1/N
    dirichlet_balance      (1-q)/(1+q) * int(a^-, shell) <= int(a^+, core)
    balance_threshold      -int(a)/int(|a|), the exponent threshold form
    neumann_balance        (1-q)/(2q+N(1-q)) * omega * r_split^N * max(a^-)
                           < int(a^+, shell)
    """

    integral: IntegralCheck
    positivity_components: int
    inner_sphere: bool
    source_strongly_positive: Optional[bool]
    source_positive: Optional[bool]
    boundary_decay: DecayFitCheck
    dirichlet_balance: Optional[BalanceCheck]
    balance_threshold: float
    neumann_balance: Optional[BalanceCheck]
    q: Optional[float] = None


def count_positive_components(a: ScalarField) -> int:
    pos = a.values > 0  # strict: zero-crossing nodes break components
    if not pos.any():
        return 0
    return int(np.sum(pos[1:] & ~pos[:-1]) + (1 if pos[0] else 0))


def boundary_decay_fit(
    a: ScalarField, rho0: float, margin: float = 0.01
) -> DecayFitCheck:
    """Log-log least-squares fit of |a| against d(x, boundary) on the tubular
    band d < rho0; the decay hypothesis asks for slope eta > 1 - 1/N."""
    g = a.grid
    d = g.distance_to_boundary()
    mask = (d < rho0) & (d > 0) & (np.abs(a.values) > 1e-14)
    n_used = int(mask.sum())
    if n_used < 2:
        return DecayFitCheck(None, None, rho0, n_used)
    eta, _ = np.polyfit(np.log(d[mask]), np.log(np.abs(a.values[mask])), 1)
    dim = g.geometry.dim if g.is_radial else 1
    return DecayFitCheck(bool(eta > 1.0 - 1.0 / dim + margin), float(eta), rho0, n_used)


def _split_radius(spec, r_split):
    if r_split is not None:
        return r_split
    if isinstance(spec, RadialSplitWeight):
        return spec.r_split
    if isinstance(spec, DeltaSplitWeight):
        return _split_radius(spec.plus_part, None) or _split_radius(spec.minus_part, None)
    return None


def check_conditions(
    spec: WeightSpec,
    grid: Grid,
    q: Optional[float] = None,
    r_split: Optional[float] = None,
    rho0: Optional[float] = None,
) -> ConditionReport:
    """Evaluate every checkable hypothesis for the weight on this grid.

    The two balance conditions need the split radius separating the declared
    positivity and negativity regions; it is taken from the spec when the
    family carries one, else from r_split.
    """
    a = eval_weight(spec, grid)
    aval = a.values
    total = integrate(a)
    apos = ScalarField(grid, np.maximum(aval, 0.0))
    aneg = ScalarField(grid, np.maximum(-aval, 0.0))
    int_abs = integrate(apos) + integrate(aneg)
    threshold = -total / int_abs if int_abs > 0 else 0.0
    threshold = float(np.clip(threshold, -1.0, 1.0))

    source_strong = source_pos = None
    try:
        s_of_a = linalg.solve_poisson(a, DIRICHLET)
        inner = s_of_a.values[grid.unknown_slice(DIRICHLET)]
        source_pos = bool(np.all(inner > 0))
        source_strong = source_pos and _strong_slope(s_of_a)
    except linalg.UnsupportedBC:  # pragma: no cover
        pass

    rho = rho0 if rho0 is not None else 0.1 * grid.diameter
    decay = boundary_decay_fit(a, rho)

    rs = _split_radius(spec, r_split)
    dir_balance = neu_balance = None
    if rs is not None and grid.is_radial and q is not None:
        R = grid.geometry.radius
        dim = grid.geometry.dim
        core = grid.nodes <= rs
        int_pos_core = float(np.dot(grid.quad_weights[core], apos.values[core]))
        int_neg_shell = float(np.dot(grid.quad_weights[~core], aneg.values[~core]))
        int_pos_shell = float(np.dot(grid.quad_weights[~core], apos.values[~core]))
        lhs = (1.0 - q) / (1.0 + q) * int_neg_shell
        dir_balance = BalanceCheck(bool(lhs <= int_pos_core), lhs, int_pos_core)
        sup_neg_core = float(np.max(aneg.values[core])) if core.any() else 0.0
        lhs_n = (
            (1.0 - q)
            / (2.0 * q + dim * (1.0 - q))
            * unit_sphere_area(dim)
            * rs**dim
            * sup_neg_core
        )
        neu_balance = BalanceCheck(bool(lhs_n < int_pos_shell), lhs_n, int_pos_shell)

    return ConditionReport(
        integral=IntegralCheck(float(total), bool(total < 0)),
        positivity_components=count_positive_components(a),
        inner_sphere=not isinstance(spec, TableWeight),
        source_strongly_positive=source_strong,
        source_positive=source_pos,
        boundary_decay=decay,
        dirichlet_balance=dir_balance,
        balance_threshold=threshold,
        neumann_balance=neu_balance,
        q=q,
    )


def _strong_slope(u: ScalarField, rel: float = 1e-6) -> bool:
    """Strict inward slope at every boundary node (one-sided, second order)."""
    g = u.grid
    v = u.values
    h = g.h
    scale = rel * max(u.norm_inf(), 1e-300) / g.diameter
    ok = True
    if not g.is_radial:
        left = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
        ok = ok and (left > scale)
    right = (3.0 * v[-1] - 4.0 * v[-2] + v[-3]) / (2.0 * h)
    ok = ok and (right < -scale)
    return bool(ok)
