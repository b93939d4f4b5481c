"""Discrete energy, residual, ground states, and sub/supersolution machinery
for  -Lap u = a(x) (u+)^q  with 0 < q < 1.

The discrete energy is the face-based quadratic form plus the weighted power
term,

    E(u) = 1/2 sum_faces f |du|^2 / h  -  1/(q+1) sum_i w_i a_i |u_i|^(q+1),

whose gradient in the quadrature metric is exactly the strong-form residual
F(u) = -Lap_h u - a (u+)^q.  A stationary point of E over the nonnegative
cone therefore drives F to round-off at every node: the sublinear forcing
keeps discrete minimizers strictly positive (a zero node with a positive
neighbor violates the cone optimality condition), so dead cores appear as
plateaus of size ~ (h^2 max a^-)^(1/(1-q)) rather than exact zeros, and the
pointwise residual tolerance is attainable.

ground_state runs multi-start projected gradient descent (each start ray-
scaled to its optimal amplitude) followed by a semismooth active-set Newton
refinement that pins nodes only while their complementarity sign allows it.
monotone_iterate implements the classical decreasing iteration between an
ordered sub/supersolution pair.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .domain import (
    DIRICHLET,
    NEUMANN,
    BoundaryCondition,
    Grid,
    GridMismatch,
    ScalarField,
    apply_laplacian,
    dirichlet_values,
    gradient_energy,
    integrate,
)
from .linalg import (
    neg_laplacian_bands,
    operator_norm_S,
    restricted_principal_mode,
    solve_poisson,
    solve_tridiag,
)


class SolverError(RuntimeError):
    pass


class OrderViolation(SolverError):
    pass


class NotSubsolution(SolverError):
    pass


class NotSupersolution(SolverError):
    pass


class BallNotPositive(SolverError):
    pass


@dataclass
class SolverOptions:
    tol_res: float = 1e-10
    max_starts: int = 8
    seed: int = 0
    max_iter: int = 400          # projected-gradient iterations per start
    newton_max_iter: int = 80
    active_threshold: float = 1e-8  # relative floor used by the Newton phase


@dataclass
class SolveResult:
    u: ScalarField
    residual_inf: float
    energy: float
    starts_used: int
    iterations: int
    converged: bool
    classification: object = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class CertifiedField:
    """A candidate sub/supersolution together with its worst residual sign."""

    field: ScalarField
    residual_extremum: float
    ok: bool


def _check_pair(a: ScalarField, u: ScalarField):
    if not a.grid.compatible(u.grid):
        raise GridMismatch("weight and field live on different grids")


def positive_power(u: np.ndarray, q: float) -> np.ndarray:
    return np.clip(u, 0.0, None) ** q


def energy(q: float, a: ScalarField, u: ScalarField, bc: BoundaryCondition) -> float:
    """Discrete energy E_q(u); q = 1 is allowed (the eigenvalue borderline)."""
    if not (0.0 < q <= 1.0):
        raise SolverError(f"q must be in (0, 1], got {q}")
    _check_pair(a, u)
    v = dirichlet_values(u) if bc is DIRICHLET else u.values
    pot = np.dot(u.grid.quad_weights * a.values, np.abs(v) ** (q + 1.0)) / (q + 1.0)
    return 0.5 * gradient_energy(u, bc) - float(pot)


def residual(q: float, a: ScalarField, u: ScalarField, bc: BoundaryCondition) -> ScalarField:
    """Strong-form residual F(u) = -Lap u - a (u+)^q; Dirichlet boundary rows
    carry the boundary mismatch u - 0."""
    _check_pair(a, u)
    lap = apply_laplacian(u, bc)
    res = -lap.values - a.values * positive_power(u.values, q)
    if bc is DIRICHLET:
        for i in u.grid.boundary_indices:
            res[i] = u.values[i]
    return ScalarField(u.grid, res)


def residual_norm(q, a, u, bc) -> float:
    return residual(q, a, u, bc).norm_inf()


# ---------------------------------------------------------------------------
# solver internals (operate on the unknown-node slice)


class _Problem:
    def __init__(self, q: float, a: ScalarField, bc: BoundaryCondition):
        self.q = q
        self.a = a
        self.bc = bc
        self.grid = a.grid
        self.s = self.grid.unknown_slice(bc)
        self.w = self.grid.quad_weights[self.s]
        self.av = a.values[self.s]
        self.dl, self.d, self.du, _ = neg_laplacian_bands(self.grid, bc)
        self.face = self.grid.faces
        self.h = self.grid.h
        self.op_scale = float(np.max(self.d))

    def tol_effective(self, opts: "SolverOptions", unorm: float) -> float:
        """Convergence tolerance: the requested residual bound plus the
        round-off floor of evaluating second differences of values ~ ||u||."""
        return opts.tol_res * max(1.0, unorm) + 16.0 * np.finfo(float).eps * self.op_scale * unorm

    def embed(self, x: np.ndarray) -> ScalarField:
        out = np.zeros(self.grid.n_nodes)
        out[self.s] = x
        return ScalarField(self.grid, out)

    def neg_lap(self, x: np.ndarray) -> np.ndarray:
        y = self.d * x
        y[:-1] += self.du[:-1] * x[1:]
        y[1:] += self.dl[1:] * x[:-1]
        return y

    def F(self, x: np.ndarray) -> np.ndarray:
        return self.neg_lap(x) - self.av * positive_power(x, self.q)

    def energy_of(self, x: np.ndarray) -> float:
        return energy(self.q, self.a, self.embed(x), self.bc)

    def stiffness_quad(self, x: np.ndarray) -> float:
        u = np.zeros(self.grid.n_nodes)
        u[self.s] = x
        du = np.diff(u)
        return float(np.dot(self.face, du * du) / self.h)

    def weight_quad(self, x: np.ndarray) -> float:
        return float(np.dot(self.w * self.av, np.abs(x) ** (self.q + 1.0)))


def _ray_scale(p: _Problem, psi: np.ndarray) -> Optional[np.ndarray]:
    """Scale a nonnegative direction to the energy minimizer along its ray.

    Along t*psi, E = t^2 k/2 - t^(q+1) m/(q+1); a negative-energy amplitude
    exists iff m > 0, with optimum t = (m/k)^(1/(1-q)).
    """
    k = p.stiffness_quad(psi)
    m = p.weight_quad(psi)
    if m <= 0 or k <= 0:
        return None
    t = (m / k) ** (1.0 / (1.0 - p.q))
    if not np.isfinite(t) or t <= 0:
        return None
    return t * psi


def _projected_gradient(p: _Problem, x0: np.ndarray, opts: SolverOptions):
    """Spectral projected gradient on the cone (warm-up phase)."""
    x = np.clip(x0, 0.0, None)
    e = p.energy_of(x)
    e_hist = [e]
    step = 1.0
    xprev = gprev = None
    it = 0
    for it in range(opts.max_iter):
        g = p.F(x)
        if xprev is not None:
            dx = x - xprev
            dg = g - gprev
            denom = np.dot(p.w * dx, dg)
            if denom > 0:
                step = np.dot(p.w * dx, dx) / denom
        step = float(np.clip(step, 1e-12, 1e12))
        accepted = False
        for _ in range(50):
            cand = np.clip(x - step * g, 0.0, None)
            ec = p.energy_of(cand)
            dec = np.dot(p.w * (cand - x), cand - x)
            if ec <= max(e_hist[-5:]) - 1e-4 * dec / max(step, 1e-30):
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        xprev, gprev = x, g
        x = cand
        e_hist.append(ec)
        scale = max(1.0, float(np.max(x, initial=0.0)))
        if np.max(np.abs(x - xprev)) <= 1e-12 * scale:
            break
    return x, it + 1


def _newton_step_phase(p: _Problem, x: np.ndarray, opts: SolverOptions, max_iter: int):
    """Damped Newton on all nodes; zero nodes stay pinned only while their
    complementarity sign F >= 0 allows it."""
    it = 0
    for it in range(max_iter):
        f = p.F(x)
        unorm = float(np.max(x, initial=0.0))
        r = float(np.max(np.abs(f)))
        if r <= 0.6 * p.tol_effective(opts, unorm):
            return x, it, True
        pinned = (x <= 0.0) & (f >= 0.0)
        floor = opts.active_threshold * max(unorm, 1e-300)
        uu = np.maximum(x, floor)
        jd = p.d - p.q * p.av * uu ** (p.q - 1.0)
        jdl = p.dl.copy()
        jdu = p.du.copy()
        rhs = -f
        if pinned.any():
            idx = np.where(pinned)[0]
            jd[idx] = 1.0
            rhs[idx] = 0.0
            jdl[idx] = 0.0
            jdu[idx] = 0.0
            nxt = idx + 1  # sever couplings into pinned columns
            nxt = nxt[nxt < len(jd)]
            jdl[nxt] = np.where(pinned[nxt - 1], 0.0, jdl[nxt])
            prv = idx - 1
            prv = prv[prv >= 0]
            jdu[prv] = np.where(pinned[prv + 1], 0.0, jdu[prv])
        try:
            delta = solve_tridiag(jdl, jd, jdu, rhs)
        except Exception:
            return x, it, False
        if not np.all(np.isfinite(delta)):
            return x, it, False
        lam = 1.0
        improved = False
        for _ in range(40):
            cand = np.clip(x + lam * delta, 0.0, None)
            rc = float(np.max(np.abs(p.F(cand))))
            if rc <= (1.0 - 1e-4 * lam) * r:
                improved = True
                break
            lam *= 0.5
        if not improved:
            return x, it, False
        x = cand
    f = p.F(x)
    unorm = float(np.max(x, initial=0.0))
    return x, it + 1, bool(np.max(np.abs(f)) <= p.tol_effective(opts, unorm))


def _tail_sweeps(p: _Problem, x: np.ndarray, opts: SolverOptions, max_sweeps: int):
    """Nonlinear Jacobi on the small-value tail: each sweep solves every
    tail node's scalar equation  d t - a t^q = coupling  exactly.

    The sublinear term makes plain Newton crawl where u is orders of
    magnitude below scale (multiplicative decay); the nodal solve jumps
    straight to the local root and the one-directional tails settle in
    about tail-length sweeps.
    """
    q = p.q
    n = len(x)
    it = 0
    best_r = np.inf
    since_best = 0
    for it in range(max_sweeps):
        unorm = float(np.max(x, initial=0.0))
        f = p.F(x)
        r = float(np.max(np.abs(f)))
        tol_eff = p.tol_effective(opts, unorm)
        if r <= 0.6 * tol_eff:
            return x, it, True
        if r < 0.98 * best_r:
            best_r, since_best = r, 0
        else:
            since_best += 1
            if since_best >= 30:  # round-off plateau: stop sweeping
                return x, it, bool(r <= tol_eff)
        tail = x < 1e-4 * unorm
        # dilate by two nodes so the interface is included
        tail[:-1] |= tail[1:]
        tail[1:] |= tail[:-1]
        tail &= np.abs(f) > 0.5 * tol_eff
        if not tail.any():
            return x, it, False
        idx = np.where(tail)[0]
        c = np.zeros(len(idx))
        left = idx - 1
        has_l = left >= 0
        c[has_l] += p.dl[idx[has_l]] * -1.0 * x[left[has_l]]
        right = idx + 1
        has_r = right < n
        c[has_r] += p.du[idx[has_r]] * -1.0 * x[right[has_r]]
        # c = lower*x_{i-1} + upper*x_{i+1} (dl/du store the negatives)
        d = p.d[idx]
        av = p.av[idx]
        t = np.maximum(x[idx], 1e-300)
        pos = av > 0
        if pos.any():
            tstar = (q * av[pos] / d[pos]) ** (1.0 / (1.0 - q))
            t[pos] = np.maximum(t[pos], 1.000001 * tstar)
        for _ in range(12):
            g = d * t - av * t**q - c
            gp = d - q * av * t ** (q - 1.0)
            gp = np.where(gp <= 0, d, gp)
            t_new = t - g / gp
            t = np.where(t_new > 0, t_new, 0.125 * t)
        x = x.copy()
        x[idx] = t
    f = p.F(x)
    unorm = float(np.max(x, initial=0.0))
    return x, it + 1, bool(np.max(np.abs(f)) <= p.tol_effective(opts, unorm))


def _newton_refine(p: _Problem, x0: np.ndarray, opts: SolverOptions):
    """Residual-driven refinement: damped Newton for the bulk alternating
    with nodal tail sweeps for the near-zero layers.

    Discrete minimizers are strictly positive (see module docstring), so the
    iterate is floored once at 1e-12 * scale: pinning then only reappears if
    complementarity genuinely demands it.
    """
    x = np.clip(x0, 0.0, None)
    unorm = float(np.max(x, initial=0.0))
    if unorm > 0:
        x = np.maximum(x, 1e-12 * unorm)
    total = 0
    for _round in range(3):
        x, it1, ok = _newton_step_phase(p, x, opts, opts.newton_max_iter)
        total += it1
        if ok:
            return x, total, True
        x, it2, ok = _tail_sweeps(p, x, opts, 600)
        total += it2
        if ok:
            # one last Newton pass tightens the bulk after tail edits
            x, it3, ok = _newton_step_phase(p, x, opts, 10)
            total += it3
            if ok:
                return x, total, True
    f = p.F(x)
    unorm = float(np.max(x, initial=0.0))
    return x, total, bool(np.max(np.abs(f)) <= p.tol_effective(opts, unorm))


def _random_direction(p: _Problem, rng: np.random.Generator) -> np.ndarray:
    """Smooth nonnegative random profile (low-order modes, positive part)."""
    g = p.grid
    x = g.nodes[p.s]
    if g.is_radial:
        xi = x / g.geometry.radius
    else:
        xi = (x - g.geometry.x_lo) / (g.geometry.x_hi - g.geometry.x_lo)
    v = np.zeros_like(xi)
    for m in range(1, 7):
        v += rng.standard_normal() / m**2 * np.sin(m * np.pi * xi)
        v += rng.standard_normal() / m**2 * np.cos((m - 0.5) * np.pi * xi)
    v = np.abs(v) + 0.05 * np.max(np.abs(v))
    return v


def _start_directions(p: _Problem, opts: SolverOptions, extra: Sequence[ScalarField]):
    dirs: list[tuple[str, np.ndarray]] = []
    apos = np.clip(p.a.values, 0.0, None)
    if p.bc is DIRICHLET and apos.max() > 0:
        z = solve_poisson(ScalarField(p.grid, apos))
        dirs.append(("poisson_plus", z.values[p.s]))
        sa = solve_poisson(p.a)
        sap = np.clip(sa.values[p.s], 0.0, None)
        if sap.max() > 0:
            dirs.append(("poisson_positive_part", sap))
    if apos.max() > 0:
        dirs.append(("weight_bump", apos[p.s]))
    try:
        from .linalg import principal_eigenpair

        ep = principal_eigenpair(p.a, p.bc)
        dirs.append(("eigenfunction", ep.phi.values[p.s]))
    except Exception:
        pass
    for j, f in enumerate(extra):
        _check_pair(p.a, f)
        dirs.append((f"extra_{j}", np.clip(f.values[p.s], 0.0, None)))
    k = 0
    while len(dirs) < opts.max_starts:
        rng = np.random.default_rng((opts.seed, 100 + k))
        dirs.append((f"random_{k}", _random_direction(p, rng)))
        k += 1
    return dirs[: max(opts.max_starts, len(extra) + 1)]


def ground_state(
    q: float,
    a: ScalarField,
    bc: BoundaryCondition,
    opts: SolverOptions | None = None,
    extra_starts: Sequence[ScalarField] = (),
) -> SolveResult:
    """Global minimizer of the energy over the nonnegative cone.

    Multi-start: Poisson-based supersolution profile, principal
    eigenfunction, the weight's positive part, caller-supplied hints, and
    seeded random profiles, each scaled to its ray-optimal amplitude.  The
    zero field is always a candidate, so the returned energy is <= 0.
    """
    if not (0.0 < q < 1.0):
        raise SolverError(f"q must be in (0, 1), got {q}")
    if opts is None:
        opts = SolverOptions()
    p = _Problem(q, a, bc)
    if bc is NEUMANN and integrate(a) >= 0:
        warnings.warn(
            "Neumann problem with nonnegative weight integral: "
            "no positive solution can exist",
            RuntimeWarning,
        )

    zero = np.zeros(p.s.stop - p.s.start)
    best_conv = (0.0, zero, "zero")  # the trivial state always converges
    best_any = (0.0, zero, "zero")
    total_iter = 0
    starts_used = 1
    if np.max(a.values) > 0:  # a <= 0 leaves only the trivial state
        for label, psi in _start_directions(p, opts, extra_starts):
            x0 = _ray_scale(p, psi)
            if x0 is None:
                continue
            starts_used += 1
            x, it_pg = _projected_gradient(p, x0, opts)
            x, it_nw, _ok = _newton_refine(p, x, opts)
            total_iter += it_pg + it_nw
            e = p.energy_of(x)
            conv = float(np.max(np.abs(p.F(x)))) <= p.tol_effective(
                opts, float(np.max(x, initial=0.0))
            )
            if conv and e < best_conv[0]:
                best_conv = (e, x, label)
            if e < best_any[0]:
                best_any = (e, x, label)

    e_best, x_best, label = best_conv
    conv = True
    if best_any[0] < e_best - 1e-10 * max(1.0, abs(e_best)):
        # a lower-energy candidate failed to converge: report it honestly
        e_best, x_best, label = best_any
        conv = False
    u = p.embed(x_best)
    res = residual(q, a, u, bc).norm_inf()
    tol_eff = p.tol_effective(opts, u.norm_inf())
    converged = bool(conv and res <= tol_eff)
    return SolveResult(
        u=u,
        residual_inf=res,
        energy=e_best,
        starts_used=starts_used,
        iterations=total_iter,
        converged=converged,
        diagnostics={"best_start": label, "tol_effective": tol_eff},
    )


# ---------------------------------------------------------------------------
# sub/supersolution constructions and the monotone iteration


def build_supersolution(a: ScalarField, q: float, grid: Grid) -> CertifiedField:
    """k S(a^+) with k = 1.1 ||S(a^+)||^(q/(1-q)): then k^(1-q) >= ||z||^q
    gives k a^+ >= a (k z)^q pointwise, a Dirichlet supersolution."""
    if not a.grid.compatible(grid):
        raise GridMismatch("weight grid mismatch")
    apos = np.clip(a.values, 0.0, None)
    if apos.max() <= 0:
        raise SolverError("supersolution profile needs a nontrivial positive part")
    z = solve_poisson(ScalarField(grid, apos))
    k = 1.1 * z.norm_inf() ** (q / (1.0 - q))
    sup = z * k
    r = residual(q, a, sup, DIRICHLET)
    scale = max(1.0, sup.norm_inf(), float(np.max(np.abs(a.values))))
    worst = float(np.min(r.values))
    return CertifiedField(sup, worst, bool(worst >= -1e-12 * scale))


def build_subsolution_ball(
    a: ScalarField, q: float, ball: tuple[float, float], grid: Grid
) -> CertifiedField:
    """eps * (principal Dirichlet mode of the ball), extended by zero.

    Needs a >= a0 > 0 on the ball; eps = 0.9 (a0/lam)^(1/(1-q)) makes
    -Lap(eps phi) = eps lam phi <= a (eps phi)^q there, and the zero
    extension only helps (negative Laplacian rows outside).
    """
    if not a.grid.compatible(grid):
        raise GridMismatch("weight grid mismatch")
    center, radius = ball
    mask = np.abs(grid.nodes - center) < radius
    idx = np.where(mask)[0]
    if len(idx) < 3:
        raise SolverError("ball contains fewer than 3 nodes")
    i_lo, i_hi = int(idx[0]), int(idx[-1])
    a0 = float(np.min(a.values[i_lo : i_hi + 1]))
    if a0 <= 0:
        raise BallNotPositive(
            f"weight is not positive on the ball (min = {a0:g})"
        )
    lam, phi = restricted_principal_mode(grid, i_lo, i_hi)
    eps = 0.9 * (a0 / lam) ** (1.0 / (1.0 - q))
    sub = ScalarField(grid, eps * phi)
    r = residual(q, a, sub, DIRICHLET)
    scale = max(1.0, float(np.max(np.abs(a.values))), sub.norm_inf())
    worst = float(np.max(r.values))
    return CertifiedField(sub, worst, bool(worst <= 1e-12 * scale))


def monotone_iterate(
    q: float,
    a: ScalarField,
    bc: BoundaryCondition,
    sub: ScalarField,
    super_: ScalarField,
    opts: SolverOptions | None = None,
    slack: float = 1e-12,
    polish: bool = True,
) -> SolveResult:
    """Decreasing iteration u_{k+1} = (-Lap + M)^(-1)(a u_k^q + M u_k) from
    the supersolution.

    M is the pointwise Lipschitz majorant q a^-(x) sub(x)^(q-1) (zero where
    a >= 0), which keeps u -> a u^q + M u nondecreasing on [sub, super] and
    the iterates sandwiched.  Where sub vanishes under a < 0 no finite
    majorant exists; those nodes use a floored value and the final Newton
    polish restores the pointwise residual tolerance.
    """
    if opts is None:
        opts = SolverOptions()
    _check_pair(a, sub)
    _check_pair(a, super_)
    scale = max(1.0, super_.norm_inf(), float(np.max(np.abs(a.values))))
    gap = sub.values - super_.values
    if np.max(gap) > slack * scale:
        raise OrderViolation("subsolution exceeds supersolution somewhere")
    r_sub = residual(q, a, sub, bc)
    if float(np.max(r_sub.values)) > slack * scale:
        raise NotSubsolution(
            f"residual of the subsolution reaches {np.max(r_sub.values):.3e} > 0"
        )
    r_sup = residual(q, a, super_, bc)
    if float(np.min(r_sup.values)) < -slack * scale:
        raise NotSupersolution(
            f"residual of the supersolution reaches {np.min(r_sup.values):.3e} < 0"
        )
    pos = sub.values > 0
    if not pos.any():
        raise SolverError("subsolution must be positive somewhere")

    p = _Problem(q, a, bc)
    sub_s = sub.values[p.s]
    aneg = np.clip(-p.av, 0.0, None)
    floor = max(1e-8 * float(np.max(sub_s, initial=0.0)), 1e-300)
    M = q * aneg * np.maximum(sub_s, floor) ** (q - 1.0)
    dl, dd, du = p.dl, p.d + M, p.du

    x = super_.values[p.s].copy()
    monotone_ok = True
    it = 0
    step = np.inf
    prev_step = np.inf
    stall = 0
    for it in range(3000):
        rhs = p.av * positive_power(x, q) + M * x
        x_new = solve_tridiag(dl, dd, du, rhs)
        x_new = np.clip(x_new, 0.0, None)
        if np.max(x_new - x) > 1e-12 * scale:
            monotone_ok = False
        step = float(np.max(np.abs(x_new - x)))
        x = x_new
        if step <= 1e-13 * scale:
            break
        stall = stall + 1 if step > 0.999 * prev_step else 0
        prev_step = step
        if stall >= 50:  # linear-rate plateau: hand over to the polish
            break
    iterations = it + 1
    if polish:
        x, it_nw, _ = _newton_refine(p, x, opts)
        iterations += it_nw

    u = p.embed(x)
    # the limit must stay inside the bracket
    tol_br = 1e-7 * scale
    below = float(np.max(sub.values - u.values))
    above = float(np.max(u.values - super_.values))
    res = residual(q, a, u, bc).norm_inf()
    converged = bool(
        res <= p.tol_effective(opts, u.norm_inf())
        and below <= tol_br
        and above <= tol_br
    )
    return SolveResult(
        u=u,
        residual_inf=res,
        energy=energy(q, a, u, bc),
        starts_used=1,
        iterations=iterations,
        converged=converged,
        diagnostics={
            "monotone": monotone_ok,
            "bracket_excess": (below, above),
            "last_step": step,
        },
    )


def apriori_bound(a: ScalarField, q: float) -> float:
    """Solution-independent sup-norm bound (||S|| ||a^+||)^(1/(1-q)) for the
    Dirichlet problem."""
    s_norm = operator_norm_S(a.grid)
    apos = float(np.max(np.clip(a.values, 0.0, None)))
    return (s_norm * apos) ** (1.0 / (1.0 - q))
