"""Batch driver: ``rgbsde <subcommand> --config FILE --out DIR``.

Exit status: 0 when every requested check passes, 1 when one fails (the
report is still written), 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import __version__
from .bsde import SpecError, solve_gbsde
from .comparison import (LinearCoefficients, SubmartingalePerturbation, drift_increments,
                         linearized_duality_check, randomized_comparison_suite, randomized_variant_suite,
                         submartingale_integral_check, variant_compare)
from .config import Config, ConfigError, ProblemConfig, load_config
from .core_model import CheckResult, LatticeSurface, _json_value, check
from .crosscheck import classical_certification, maximality_check, oracle_agreement_check
from .montecarlo import MCSetup, representation_checks
from .problems import constant_terminal, make_spec
from .reflected import (rate_check, rate_study, reflected_checks, report_monotonicity, solve_reflected,
                        uniform_bound_checks)
from .sublinear import conditional_g_expectation

SUBCOMMANDS = ("expect", "bsde", "reflect", "rate-study", "compare", "xcheck", "mc-rep", "all")

KNOWN_CHECKS = {
    "defect": "bsde", "reflected_converged": "reflect", "obstacle": "reflect", "a_increments_nonpositive": "reflect",
    "martingale_nonincreasing": "reflect", "martingale_defect": "reflect", "skorokhod_residual": "reflect",
    "rate_slope": "rate-study", "sup_excess_monotone": "rate-study", "uniform_bounds": "rate-study",
    "cauchy_gaps_decreasing": "rate-study", "penalty_monotonicity": "rate-study",
    "comparison_randomized": "compare", "variant_randomized": "compare", "variant_equality": "compare",
    "submartingale_integral": "compare", "endpoint_sufficiency": "compare", "duality_identity": "compare",
    "duality_inequality": "compare",
    "oracle_agreement": "xcheck", "maximality_ladder": "xcheck", "maximality_limit": "xcheck",
    "classical_certification": "xcheck",
    "mc_domination": "mc-rep", "mc_attainment": "mc-rep",
}

ANCHOR_DEFECT = "G-BSDE solution: K is a decreasing G-martingale"
_CERTIFY_STEPS = 10


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------

def write_surface_csv(path: Path, surface: LatticeSurface | np.ndarray, times: np.ndarray, x: np.ndarray):
    """Header ``t,x,value``; rows ordered by time step then node; 17 significant digits."""
    vals = surface.values if isinstance(surface, LatticeSurface) else np.asarray(surface)
    lines = ["t,x,value"]
    for i, t in enumerate(times):
        ts = "%.17g" % t
        lines.extend(f"{ts},{'%.17g' % xj},{'%.17g' % v}" for xj, v in zip(x, vals[i]))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_json(path: Path, obj):
    path.write_text(json.dumps(_json_value(obj), sort_keys=True, indent=2, allow_nan=False) + "\n",
                    encoding="utf-8")


def _base_name(name: str) -> str:
    return name.split("[", 1)[0]


def _group(name: str) -> str:
    base = _base_name(name)
    if base.startswith("uniform_bound"):
        return "uniform_bounds"
    if base.startswith("dp_vs_"):
        return "classical_certification"
    return base


class Run:
    """Collects the checks of one invocation and filters them by the config's ``checks`` list."""

    def __init__(self, cfg: Config, out: Path, threads: int, seed: Optional[int]):
        self.cfg, self.out, self.threads = cfg, out, threads
        self.seed = cfg.mc.seed if seed is None else seed
        self.failed = False
        if cfg.checks is not None:
            unknown = sorted(set(cfg.checks) - set(KNOWN_CHECKS))
            if unknown:
                raise ConfigError("checks", f"unknown check(s) {unknown}; known: {sorted(KNOWN_CHECKS)}")

    def wanted(self, name: str) -> bool:
        return self.cfg.checks is None or _group(name) in self.cfg.checks

    def select(self, checks: Sequence[CheckResult]) -> list[dict]:
        out = []
        for c in checks:
            if self.wanted(c.name):
                self.failed |= not c.passed
                out.append(c.to_dict())
        return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_expect(run: Run):
    p = run.cfg.require_problem()
    spec = run.cfg.spec(p)
    surf = conditional_g_expectation(spec.terminal_row(), spec)
    write_surface_csv(run.out / "expectation.csv", surf, spec.grid.times, spec.x)
    write_json(run.out / "expect.json", {"problem": p.name, "value": surf.root(), "n_steps": spec.grid.n_steps,
                                         "checks": []})


def cmd_bsde(run: Run):
    p = run.cfg.require_problem()
    spec = run.cfg.spec(p)
    sol = solve_gbsde(spec)
    write_surface_csv(run.out / "bsde_Y.csv", sol.Y, spec.grid.times, spec.x)
    write_surface_csv(run.out / "bsde_Z.csv", sol.Z, spec.grid.times, spec.x)
    d = np.stack([s.values for s in sol.defect.values()])
    checks = [check("defect_nonnegative", -float(d.min()), 0.0, ANCHOR_DEFECT),
              check("defect_min_zero", float(np.abs(sol.min_defect()).max()), 0.0, ANCHOR_DEFECT)]
    checks = [dataclasses.replace(c, name=f"defect[{c.name}]") for c in checks]
    write_json(run.out / "bsde.json", {"problem": p.name, "Y0": sol.Y0, "picard_iterations": sol.picard_iterations,
                                       "checks": run.select(checks)})


def _reflect_one(run: Run, p: ProblemConfig):
    if p.obstacle is None:
        raise ConfigError("problem.obstacle", f"problem {p.name!r} has no obstacle")
    spec = run.cfg.spec(p)
    rs = solve_reflected(spec, run.cfg.penalty.n_list, run.cfg.penalty.tol)
    return spec, rs


def cmd_reflect(run: Run):
    p = run.cfg.require_problem()
    _, rs = _reflect_one(run, p)
    t, x = rs.spec.grid.times, rs.spec.x
    write_surface_csv(run.out / "reflect_Y.csv", rs.Y, t, x)
    write_surface_csv(run.out / "reflect_A.csv", rs.A_increments, t, x)
    checks = [CheckResult("reflected_converged", rs.report.converged, 0.0 if rs.report.converged else -1.0, 0.0,
                          "penalisation ladder reaches the stopping tolerance", float(rs.report.converged),
                          {"tol": run.cfg.penalty.tol, "n_final": rs.final.n})]
    checks += reflected_checks(rs).checks
    write_json(run.out / "reflect.json", {"problem": p.name, "Y0": rs.Y.root(), "report": rs.report.to_dict(),
                                          "checks": run.select(checks)})


def cmd_rate_study(run: Run):
    p = run.cfg.require_problem()
    spec = run.cfg.spec(p)
    ns = run.cfg.penalty.n_list
    try:
        report = rate_study(spec, ns)
    except ValueError as exc:
        if isinstance(exc, SpecError):
            raise
        raise ConfigError("penalty.n_list", str(exc)) from None
    lines = ["n,sup_excess,L_T_norm,K_T_norm,var_A,cauchy_gap"]
    for r in report.rows:
        gap = "" if r.cauchy_gap is None else "%.17g" % r.cauchy_gap
        lines.append(",".join("%.17g" % v for v in (r.n, r.sup_excess, r.L_T_norm, r.K_T_norm, r.var_A)) + "," + gap)
    (run.out / "rate_study.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    checks = rate_check(report).checks + uniform_bound_checks(spec, report).checks
    checks.append(report_monotonicity(report))
    write_json(run.out / "rate_study.json", {"problem": p.name, "slope": report.slope,
                                             "slope_status": report.slope_status, "report": report.to_dict(),
                                             "checks": run.select(checks)})


def cmd_compare(run: Run):
    p = run.cfg.require_problem()
    spec = run.cfg.spec(p)
    n_draws = int(run.cfg.compare.get("n_draws", 50))
    seed = int(run.cfg.compare.get("seed", 0))
    checks = [randomized_comparison_suite(spec, n_draws, seed, run.threads),
              randomized_variant_suite(spec, n_draws, seed + 1, run.threads)]
    checks += variant_compare(spec, SubmartingalePerturbation(0.0), spec.terminal_xi, spec.generator_f).checks
    X = np.sign(spec.x)[None, :] * np.ones((spec.grid.n_steps + 1, 1))
    checks += submartingale_integral_check(X, drift_increments(2.0, spec), drift_increments(1.0, spec), spec).checks
    v = spec.band.sigma_hi_sq
    classical = make_spec(v, v, spec.grid.horizon_T, spec.grid.n_steps, constant_terminal(1.0))
    checks += linearized_duality_check(LinearCoefficients(a=0.3), constant_terminal(1.0),
                                       lambda t, x: t + 0.0 * x, classical).checks
    write_json(run.out / "compare.json", {"problem": p.name, "n_draws": n_draws, "checks": run.select(checks)})


def cmd_xcheck(run: Run):
    if not run.cfg.problems:
        raise ConfigError("problem", "missing")
    per_spec = {}
    for p in run.cfg.problems:
        spec, rs = _reflect_one(run, p)
        agree = oracle_agreement_check(rs)
        checks = [agree] + maximality_check(rs).checks
        if spec.band.is_classical:
            checks += classical_certification(run.cfg.spec(p, _CERTIFY_STEPS)).checks
        per_spec[p.name] = {"max_abs_diff": agree.value, "tolerance": agree.tolerance,
                            "n_final": rs.final.n, "n_steps": rs.spec.grid.n_steps,
                            "checks": run.select(checks)}
    write_json(run.out / "xcheck.json", {"specs": per_spec})


def _is_convex(row: np.ndarray) -> bool:
    return bool(np.all(row[2:] - 2 * row[1:-1] + row[:-2] >= -1e-12))


def cmd_mc_rep(run: Run):
    cfg = run.cfg
    results = {}
    checks_all = []
    for p in cfg.problems or [cfg.require_problem()]:
        spec = cfg.spec(p)
        setup = MCSetup(spec.band, spec.grid.horizon_T, cfg.mc.n_steps, threads=run.threads)
        family = cfg.policies(spec, p.terminal)
        rep = representation_checks(p.terminal, spec, family, cfg.mc.n_paths, run.seed, setup,
                                    convex=_is_convex(spec.terminal_row()), name=p.name)
        sel = run.select(rep.checks)
        checks_all.extend(sel)
        results[p.name] = {"checks": sel}
    write_json(run.out / "mc_rep.json", {"n_paths": cfg.mc.n_paths, "seed": run.seed, "specs": results})


def cmd_all(run: Run):
    for name, fn in COMMANDS.items():
        if name == "all":
            continue
        if name in ("reflect", "rate-study", "xcheck") and not any(
                p.obstacle is not None for p in run.cfg.problems):
            continue
        fn(run)


COMMANDS: dict[str, Callable[[Run], None]] = {
    "expect": cmd_expect, "bsde": cmd_bsde, "reflect": cmd_reflect, "rate-study": cmd_rate_study,
    "compare": cmd_compare, "xcheck": cmd_xcheck, "mc-rep": cmd_mc_rep, "all": cmd_all,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rgbsde", description="Lattice G-expectation and reflected G-BSDE experiments.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("subcommand", choices=SUBCOMMANDS)
    ap.add_argument("--config", required=True, metavar="PATH")
    ap.add_argument("--out", required=True, metavar="DIR")
    ap.add_argument("--threads", type=int, default=1, metavar="N", help="worker threads (speed only)")
    ap.add_argument("--seed", type=int, default=None, help="overrides mc.seed")
    return ap


def run(subcommand: str, config_path: str, out_dir: str, threads: int = 1, seed: Optional[int] = None) -> int:
    if threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = load_config(config_path)
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        r = Run(cfg, out, threads, seed)
        COMMANDS[subcommand](r)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SpecError as exc:
        print(f"error: config key 'problem': {exc}", file=sys.stderr)
        return 2
    return 1 if r.failed else 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.out, args.threads, args.seed)


if __name__ == "__main__":
    sys.exit(main())
