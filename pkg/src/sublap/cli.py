"""Command-line driver: JSON config in, CSV/JSON results out.

Subcommands: solve, sweep, eigen, poisson, conditions, deadcore, verify.
Exit codes: 0 ok, 1 config error, 2 nonconvergence, 3 verification failure.
Outputs are deterministic for a fixed config and seed; floats are written
with 17 significant digits so they round-trip exactly.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis, continuation, weights
from .domain import (
    DIRICHLET,
    NEUMANN,
    BoundaryCondition,
    Grid,
    Line,
    Radial,
    ScalarField,
    build_grid,
    integrate,
)
from .linalg import linearized_eigenvalue, operator_norm_S, principal_eigenpair, solve_poisson
from .nonlinear import SolverOptions, apriori_bound, ground_state, residual


class ConfigError(ValueError):
    pass


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def _jsonable(obj):
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {k: _jsonable(v) for k, v in dataclasses.asdict(obj).items()}
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, ScalarField):
        return [float(v) for v in obj.values]
    if hasattr(obj, "value") and obj.__class__.__module__.startswith("sublap"):
        return obj.value  # enums
    return obj


def write_json(path: Path, payload: dict):
    text = json.dumps(_jsonable(payload), indent=2, sort_keys=True)
    path.write_text(text + "\n")


def write_csv(path: Path, header: list[str], rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([fmt(v) for v in row])


# ---------------------------------------------------------------------------
# config parsing


def parse_bc(name: str) -> BoundaryCondition:
    try:
        return BoundaryCondition(name.lower())
    except Exception:
        raise ConfigError(f"unknown boundary condition {name!r}")


def parse_geometry(cfg: dict):
    kind = cfg.get("kind")
    if kind == "line":
        return Line(float(cfg["x_lo"]), float(cfg["x_hi"]))
    if kind == "radial":
        return Radial(float(cfg["radius"]), int(cfg["dim"]))
    raise ConfigError(f"unknown geometry kind {kind!r}")


def parse_weight(cfg: dict) -> weights.WeightSpec:
    variant = cfg.get("variant")
    if variant == "cosine":
        return weights.CosineWeight(float(cfg["q"]))
    if variant == "radial_split":
        return weights.RadialSplitWeight(
            layout=cfg["layout"],
            core_amplitude=float(cfg["core_amplitude"]),
            shell_amplitude=float(cfg["shell_amplitude"]),
            r_split=float(cfg["r_split"]),
            core_power=float(cfg.get("core_power", 1.0)),
            shell_power=float(cfg.get("shell_power", 1.0)),
        )
    if variant == "delta_split":
        return weights.DeltaSplitWeight(
            plus_part=parse_weight(cfg["plus"]),
            minus_part=parse_weight(cfg["minus"]),
            delta=float(cfg["delta"]),
        )
    if variant == "table":
        return weights.TableWeight(tuple(cfg["values"]))
    raise ConfigError(f"unknown weight variant {variant!r}")


def parse_solver(cfg: dict) -> SolverOptions:
    opts = SolverOptions()
    for key in ("tol_res", "active_threshold"):
        if key in cfg:
            setattr(opts, key, float(cfg[key]))
    for key in ("max_starts", "seed", "max_iter", "newton_max_iter"):
        if key in cfg:
            setattr(opts, key, int(cfg[key]))
    if opts.tol_res <= 0 or opts.active_threshold <= 0:
        raise ConfigError("solver tolerances must be positive")
    return opts


class RunConfig:
    def __init__(self, raw: dict):
        try:
            prob = raw["problem"]
            self.bc = parse_bc(prob["bc"])
            self.geometry = parse_geometry(prob["geometry"])
            self.n_interior = int(prob["n_interior"])
            self.weight = parse_weight(raw["weight"]) if "weight" in raw else None
            self.q = float(raw["q"]) if "q" in raw else None
            self.q_grid = [float(v) for v in raw["q_grid"]] if "q_grid" in raw else None
            self.solver = parse_solver(raw.get("solver", {}))
            out = raw.get("output", {})
            self.out_dir = Path(os.environ.get("OUTPUT_DIR", out.get("dir", ".")))
            self.formats = set(out.get("formats", ["csv", "json"]))
            self.mode = raw.get("mode", "positivity")
            self.conditions = raw.get("conditions", {})
            self.deadcore = raw.get("deadcore", {})
            self.jobs = int(raw.get("jobs", 1))
        except ConfigError:
            raise
        except Exception as exc:
            raise ConfigError(f"malformed config: {exc}") from exc
        if self.q is not None and not (0.0 < self.q < 1.0):
            raise ConfigError("q must be in (0, 1)")
        if self.q_grid is not None:
            if not self.q_grid:
                raise ConfigError("q_grid must not be empty")
            if not all(0.0 < v < 1.0 for v in self.q_grid):
                raise ConfigError("q_grid values must be in (0, 1)")

    def grid(self) -> Grid:
        return build_grid(self.geometry, self.n_interior)


def load_config(path: str) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except Exception as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig(raw)


# ---------------------------------------------------------------------------
# subcommands


def cmd_solve(cfg: RunConfig) -> int:
    if cfg.weight is None or cfg.q is None:
        raise ConfigError("solve needs a weight and a single q")
    grid = cfg.grid()
    a = weights.eval_weight(cfg.weight, grid)
    res = ground_state(cfg.q, a, cfg.bc, cfg.solver)
    cls = analysis.classify(res.u, cfg.bc)
    res.classification = cls
    rvec = residual(cfg.q, a, res.u, cfg.bc)
    gamma = None
    if res.u.norm_inf() > 0:
        try:
            gamma = linearized_eigenvalue(cfg.q, res.u, a, cfg.bc).value
        except Exception:
            gamma = None
    bound_ok = None
    if cfg.bc is DIRICHLET and res.u.norm_inf() > 0:
        bound_ok = bool(
            res.u.norm_inf() <= apriori_bound(a, cfg.q) * (1.0 + 1e-6)
        )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        write_csv(
            cfg.out_dir / "solution.csv",
            ["x", "u", "a", "residual"],
            zip(grid.nodes, res.u.values, a.values, rvec.values),
        )
    if "json" in cfg.formats:
        report = {
            "classification": cls.kind.value,
            "energy": res.energy,
            "gamma1": gamma,
            "residual_inf": rvec.norm_inf(),  # recomputed, not the solver's value
            "norm_inf": res.u.norm_inf(),
            "min_u": float(np.min(res.u.values)),
            "converged": res.converged,
            "starts_used": res.starts_used,
            "iterations": res.iterations,
            "apriori_bound_ok": bound_ok,
            "q": cfg.q,
            "conditions": weights.check_conditions(cfg.weight, grid, q=cfg.q),
        }
        write_json(cfg.out_dir / "report.json", report)
    return 0 if res.converged else 2


def _sweep_point(args):
    q, a, bc, opts, thresholds = args
    return analysis._solve_and_classify(q, a, bc, opts, thresholds)


def cmd_sweep(cfg: RunConfig) -> int:
    if cfg.weight is None or not cfg.q_grid:
        raise ConfigError("sweep needs a weight and a q_grid")
    grid = cfg.grid()
    a = weights.eval_weight(cfg.weight, grid)
    th = analysis.DEFAULT_THRESHOLDS
    qs = sorted(cfg.q_grid)
    branch_mode = cfg.mode == "branch"

    if branch_mode:
        bd = continuation.trace_branch(a, cfg.bc, qs, cfg.solver)
        rows = [
            (
                p.q,
                p.norm_inf,
                p.min_u,
                p.energy,
                p.gamma1,
                "",  # classification not recomputed on branches
                p.scaled_distance,
                p.converged,
            )
            for p in bd.points
        ]
        payload = {
            "mode": "branch",
            "mu": bd.mu,
            "limit_amplitude": bd.amplitude,
            "regime": bd.regime.value,
            "tail_monotone": bd.tail_monotone,
        }
        converged = [p.converged for p in bd.points]
    else:
        # parallel points, deterministic assembly in q order
        jobs = max(1, cfg.jobs)
        tasks = [(q, a, cfg.bc, cfg.solver, th) for q in qs]
        if jobs == 1:
            points = [_sweep_point(t) for t in tasks]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as ex:
                points = list(ex.map(_sweep_point, tasks))
        strong = [pt.kind is analysis.Kind.STRONGLY_POSITIVE for pt in points]
        if any(strong):
            first = strong.index(True)
            interval_ok = all(strong[first:])
            q_hat = points[first].q
            if first > 0 and interval_ok:
                lo, hi = points[first - 1].q, points[first].q
                while hi - lo > 1e-3:
                    mid = 0.5 * (lo + hi)
                    pt = analysis._solve_and_classify(mid, a, cfg.bc, cfg.solver, th)
                    if pt.kind is analysis.Kind.STRONGLY_POSITIVE:
                        hi = mid
                    else:
                        lo = mid
                q_hat = hi
        else:
            interval_ok = True
            q_hat = None
        rows = [
            (p.q, p.norm_inf, p.min_u, p.energy, p.gamma1, p.kind.value, "", p.converged)
            for p in points
        ]
        payload = {"mode": "positivity", "q_hat": q_hat, "interval_ok": interval_ok}
        converged = [p.converged for p in points]

    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        write_csv(
            cfg.out_dir / "sweep.csv",
            ["q", "norm_inf", "min_u", "energy", "gamma1", "classification",
             "scaled_distance", "converged"],
            rows,
        )
    if "json" in cfg.formats:
        payload["converged_fraction"] = sum(converged) / len(converged)
        write_json(cfg.out_dir / "sweep.json", payload)
    return 0 if sum(converged) >= 0.8 * len(converged) else 2


def cmd_eigen(cfg: RunConfig) -> int:
    if cfg.weight is None:
        raise ConfigError("eigen needs a weight")
    grid = cfg.grid()
    a = weights.eval_weight(cfg.weight, grid)
    ep = principal_eigenpair(a, cfg.bc)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        write_csv(
            cfg.out_dir / "eigen.csv",
            ["x", "phi", "a"],
            zip(grid.nodes, ep.phi.values, a.values),
        )
    if "json" in cfg.formats:
        write_json(
            cfg.out_dir / "eigen.json",
            {"mu": ep.mu, "residual_inf": ep.residual_inf,
             "normalization": integrate(ep.phi.with_values(ep.phi.values**2))},
        )
    return 0


def cmd_poisson(cfg: RunConfig) -> int:
    if cfg.weight is None:
        raise ConfigError("poisson needs a weight")
    if cfg.bc is not DIRICHLET:
        raise ConfigError("the Poisson map is Dirichlet-only")
    grid = cfg.grid()
    a = weights.eval_weight(cfg.weight, grid)
    u = solve_poisson(a)
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        write_csv(
            cfg.out_dir / "poisson.csv",
            ["x", "a", "u"],
            zip(grid.nodes, a.values, u.values),
        )
    if "json" in cfg.formats:
        write_json(
            cfg.out_dir / "poisson.json",
            {
                "norm_inf": u.norm_inf(),
                "min": float(np.min(u.values)),
                "max": float(np.max(u.values)),
                "operator_norm": operator_norm_S(grid),
            },
        )
    return 0


def cmd_conditions(cfg: RunConfig) -> int:
    if cfg.weight is None:
        raise ConfigError("conditions needs a weight")
    if cfg.q is None:
        raise ConfigError("conditions needs q (the balance checks depend on it)")
    grid = cfg.grid()
    r_split = cfg.conditions.get("r_split")
    rho0 = cfg.conditions.get("rho0")
    rep = weights.check_conditions(
        cfg.weight, grid, q=cfg.q,
        r_split=float(r_split) if r_split is not None else None,
        rho0=float(rho0) if rho0 is not None else None,
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    write_json(cfg.out_dir / "conditions.json", {"report": rep})
    return 0


def cmd_deadcore(cfg: RunConfig) -> int:
    dc = cfg.deadcore
    try:
        deltas = [float(v) for v in dc["deltas"]]
        rho = float(dc["rho"])
        q_bar = float(dc["q_bar"])
    except Exception as exc:
        raise ConfigError(f"deadcore needs deltas, rho, q_bar: {exc}") from exc
    if cfg.weight is None or not isinstance(cfg.weight, weights.DeltaSplitWeight):
        raise ConfigError("deadcore needs a delta_split weight (delta gives the parts)")
    grid = cfg.grid()
    b1 = weights.eval_weight(cfg.weight.plus_part, grid)
    b2 = weights.eval_weight(cfg.weight.minus_part, grid)
    rep = analysis.deadcore_delta_sweep(
        b1, b2, q_bar, rho, deltas, cfg.bc, cfg.solver
    )
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if "csv" in cfg.formats:
        write_csv(
            cfg.out_dir / "deadcore.csv",
            ["delta", "vanishes", "max_on_region", "norm_inf", "converged"],
            [(r.delta, r.vanishes, r.max_on_region, r.norm_inf, r.converged) for r in rep.rows],
        )
    if "json" in cfg.formats:
        write_json(
            cfg.out_dir / "deadcore.json",
            {
                "delta_first_deadcore": rep.delta_first_deadcore,
                "region_nodes": rep.region_nodes,
            },
        )
    return 0


def cmd_verify(args) -> int:
    from . import acceptance

    if args.list:
        for name in acceptance.check_names():
            print(name)
        return 0
    only = args.only.split(",") if args.only else None
    results = acceptance.run_all(only=only, corrupt=args.corrupt)
    failed = [r for r in results if not r.passed]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<32} {r.detail}  ({r.seconds:.1f}s)")
    if failed:
        print(f"{len(failed)} check(s) failed: " + ", ".join(r.name for r in failed))
        return 3
    print(f"all {len(results)} checks passed")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="sublap",
        description="Solve -Lap u = a(x) u^q with sign-changing a and verify "
        "its positivity/dead-core structure.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "eigen", "poisson", "conditions", "deadcore"):
        sp = sub.add_parser(name)
        sp.add_argument("config", help="JSON run configuration")
        if name == "sweep":
            sp.add_argument("--jobs", type=int, default=None,
                            help="parallel solves (output is identical for any value)")
    vp = sub.add_parser("verify", help="run the built-in acceptance checks")
    vp.add_argument("--list", action="store_true", help="list check names and exit")
    vp.add_argument("--only", default=None, help="comma-separated subset of checks")
    vp.add_argument("--corrupt", default=None, help=argparse.SUPPRESS)  # test hook

    args = parser.parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args)
    try:
        cfg = load_config(args.config)
        if args.command == "sweep" and getattr(args, "jobs", None) is not None:
            cfg.jobs = args.jobs
        handler = {
            "solve": cmd_solve,
            "sweep": cmd_sweep,
            "eigen": cmd_eigen,
            "poisson": cmd_poisson,
            "conditions": cmd_conditions,
            "deadcore": cmd_deadcore,
        }[args.command]
        return handler(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
