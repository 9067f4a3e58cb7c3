"""Batch runner: ``isaacslab <command> --spec FILE --out DIR [--seed N] [--threads N]``.

Exit codes: 0 success, 2 invalid input, 3 a ladder did not converge (the
gap curve is still written), 4 a numerical contract was violated (step size,
diagonal dominance or a failed verification).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .barriers import find_barrier, verify_barrier
from .errors import NumericalContractError, ValidationError
from .grid import GridFunction, format_float, write_csv
from .harness import (
    gap_rate,
    penalty_bound_critical_alpha,
    penalty_bound_sweep,
    sample_interior_nodes,
    stability_ladder,
    viscosity_check,
)
from .mollify import MollifierKernel, check_mollifier_estimates, mollify
from .operators import validate_structure
from .problem import load_problem
from .solver import LOWER, UPPER, extremal_solution, solve_cutoff, uniqueness_gap

__all__ = ["main", "run"]

EXIT_OK, EXIT_VALIDATION, EXIT_NONCONVERGED, EXIT_CONTRACT = 0, 2, 3, 4
COMMANDS = ("solve", "extremal", "uniqueness", "stability", "verify", "sweep")


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format_float(v)
    return str(v)


def _write_table(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(_cell(v) for v in row) for row in rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


class _Run:
    def __init__(self, problem, out, command):
        self.problem = problem
        self.out = out
        self.command = command
        self.outputs = []
        self.results = {}

    def path(self, name):
        self.outputs.append(name)
        return os.path.join(self.out, name)

    def table(self, name, header, rows):
        _write_table(self.path(name), header, rows)

    def field(self, name, u):
        write_csv(u, self.path(name))

    def report(self, name, rep):
        rep.to_csv(self.path(name))


def _manifest(run, spec_path, status, threads):
    p = run.problem
    g = p.grid
    return {
        "command": run.command,
        "status": status,
        "inputs": {"spec": os.path.basename(spec_path), "sha256": p.digest, "seed": p.seed},
        "constants": p.manifest_constants(),
        "grid": {"d": g.d, "T": g.T, "h": g.h, "tau": g.tau, "lower": list(g.lower),
                 "upper": list(g.upper), "nodes": int(g.full_mask.sum())},
        "experiment": {"K_ladder": p.ladder, "n_ladder": p.n_ladder, "tol": p.tol,
                       "scheme_tolerance": p.scheme_tolerance, "threads": threads},
        "results": run.results,
        "outputs": sorted(run.outputs),
        "versions": {"isaacslab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
    }


def _cmd_solve(run, args):
    p = run.problem
    K = args.K if args.K is not None else p.ladder[-1]
    sign = LOWER if args.side == "lower" else UPPER
    u, rep = solve_cutoff(p.coeffs, p.g, p.grid, K, sign, p.scheme)
    run.field("solution.csv", u)
    run.report("report.csv", rep)
    run.results = {"K": K, "side": args.side, "residual": rep.residual, "cfl": rep.cfl}
    return EXIT_OK


def _cmd_extremal(run, args):
    p = run.problem
    status = EXIT_OK
    for side, name in (("max", "maximal"), ("min", "minimal")):
        u, rep = extremal_solution(p.coeffs, p.g, p.grid, p.ladder, p.tol, side, p.scheme)
        run.report(f"gaps_{side}.csv", rep)
        run.field(f"{name}.csv", u)
        run.results[name] = {"converged": rep.converged, "K": rep.Ks[-1]}
        if not rep.converged:
            status = EXIT_NONCONVERGED
    return status


def _cmd_uniqueness(run, args):
    p = run.problem
    res = uniqueness_gap(p.coeffs, p.g, p.grid, p.ladder, p.tol, p.scheme)
    run.report("gaps.csv", res.report)
    first = next((K for K, gap in res.curve if gap < p.tol), None)
    try:
        (rate, r2), used = gap_rate(res.curve)
    except ValidationError:
        rate, r2, used = math.nan, math.nan, sum(1 for _, gap in res.curve if gap > 0)
    run.table("rate.csv", ["p", "r2", "points"], [(rate, r2, used)])
    run.results = {"final_gap": res.final_gap, "unique": res.unique, "first_K_below_tol": first,
                   "rate": None if math.isnan(rate) else rate, "r2": None if math.isnan(r2) else r2}
    return EXIT_OK if res.unique else EXIT_NONCONVERGED


def _cmd_stability(run, args):
    p = run.problem
    M = p.setting("probe_M", 2.0)
    rep = stability_ladder(p.coeffs, p.g, p.grid, p.n_ladder, p.ladder, p.tol, regimes=p.regimes,
                           M=M, config=p.scheme)
    rows = [row + (conv,) for row, conv in zip(rep.rows(), rep.converged)]
    run.table("stability.csv", ["n", "deviation", "base_deviation", "delta_norm", "converged"], rows)
    run.results = {"deviations_decrease": rep.deviations_decrease, "delta_decreases": rep.delta_decreases,
                   "final_deviation": rep.deviations[-2] if len(rep.deviations) > 1 else 0.0,
                   "converged": all(rep.converged)}
    return EXIT_OK if all(rep.converged) else EXIT_NONCONVERGED


def _cmd_verify(run, args):
    p = run.problem
    g = p.grid
    rng = np.random.default_rng(p.seed)
    ok = True

    # structure
    pts = g.points[g.mask]
    m = 256
    t = rng.uniform(0, g.T, m)
    x = pts[rng.integers(0, len(pts), m)]
    y = pts[rng.integers(0, len(pts), m)]
    probes = rng.uniform(-2, 2, (16, g.d + 1))
    srep = validate_structure(p.coeffs, t, x, y, probes, p.bounds.delta, p.constants.gamma)
    sd = srep.as_dict()
    run.table("structure.csv", ["quantity", "value"],
              [(k, v) for k, v in sd.items() if k not in ("violations", "passed")]
              + [("passed", srep.passed)])
    ok &= srep.passed

    # barrier
    bar = find_barrier(pts, p.bounds.delta_bar, p.constants.K0)
    brep = verify_barrier(bar, pts, p.bounds.delta_bar, p.constants.K0)
    run.table("barrier.csv", ["mu", "R", "margin", "min_value", "passed"],
              [(bar.mu, bar.R, brep.margin, brep.min_value, brep.passed)])
    ok &= brep.passed

    # mollifier checks, with approximation ratios taken on a cutoff solution
    kernel = MollifierKernel(g.d)
    scales = [2 * g.h, 4 * g.h]
    u, _ = solve_cutoff(p.coeffs, p.g, g, p.ladder[-1], UPPER, p.scheme)
    rows = []
    const = GridFunction(g, np.ones(g.shape))
    for eps in scales:
        dk = kernel.discrete(g, eps**2, eps)
        mass = float(dk.weights.sum())
        ce = mollify(const, eps, kernel)
        cerr = float(np.abs(ce.values - 1.0)[ce.defined].max())
        rows.append((eps, mass, cerr))
    est = check_mollifier_estimates(u, p.constants.kappa, scales, kernel)
    rows = [r + (r0, r1) for r, r0, r1 in zip(rows, est.r0, est.r1)]
    run.table("mollifier.csv", ["eps", "mass", "constant_error", "ratio0", "ratio1"], rows)
    ok &= all(abs(r[1] - 1) <= 1e-10 and r[2] <= 1e-12 for r in rows)

    # inequality sweep
    sweep = penalty_bound_sweep()
    run.table("penalty_bound.csv", ["tuples", "violations", "worst"], [(sweep.count, sweep.violations, sweep.worst)])
    ok &= sweep.violations == 0

    # viscosity probes at sampled interior nodes, away from the final time
    radii = [2 * g.h, 4 * g.h]
    margin = int(math.ceil(max(radii) ** 2 / g.tau))
    count = int(p.setting("viscosity_nodes", 16, int))
    C = p.setting("viscosity_C", 10.0)
    ue, _ = extremal_solution(p.coeffs, p.g, g, p.ladder, p.tol, "max", p.scheme)
    nodes = sample_interior_nodes(g, rng, count, margin)
    vrep = viscosity_check(ue, p.coeffs, nodes, radii, C=C, kappa=p.constants.kappa)
    run.table("viscosity.csv", ["n"] + [f"i{k + 1}" for k in range(g.d)] + ["r", "sub", "super", "tol"],
              [tuple(node) + (r, s, q, tl) for node, r, s, q, tl in vrep.rows()])
    ok &= vrep.passed

    run.results = {"structure": srep.passed, "barrier": brep.passed, "penalty_violations": sweep.violations,
                   "viscosity": vrep.passed, "passed": bool(ok)}
    return EXIT_OK if ok else EXIT_CONTRACT


def _cmd_sweep(run, args):
    p = run.problem
    nus = [float(v) for v in str(p.experiment.get("sweep_nu", "0.1 0.25 0.5")).split()]
    deltas = [float(v) for v in str(p.experiment.get("sweep_delta", "0.5 1")).split()]
    res = penalty_bound_sweep(nus, deltas)
    margin = res.lhs - res.rhs
    rows = []
    for nu in nus:
        for delta in deltas:
            for beta in np.unique(res.beta[(res.nu == nu) & (res.delta == delta)]):
                sel = (res.nu == nu) & (res.delta == delta) & (res.beta == beta)
                crit = penalty_bound_critical_alpha(beta, nu, delta) if beta < delta else math.inf
                rows.append((nu, delta, beta, crit, int(sel.sum()), float(margin[sel].max()),
                             int((~res.passed[sel]).sum())))
    run.table("sweep.csv", ["nu", "delta", "beta", "critical_alpha", "tuples", "worst_margin", "violations"],
              rows)
    run.results = {"tuples": res.count, "violations": res.violations}
    return EXIT_OK if res.violations == 0 else EXIT_CONTRACT


_HANDLERS = {
    "solve": _cmd_solve,
    "extremal": _cmd_extremal,
    "uniqueness": _cmd_uniqueness,
    "stability": _cmd_stability,
    "verify": _cmd_verify,
    "sweep": _cmd_sweep,
}


def _parser():
    ap = argparse.ArgumentParser(prog="isaacslab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--spec", required=True, help="problem file")
    ap.add_argument("--out", required=True, help="output directory")
    ap.add_argument("--seed", type=int, default=None, help="override the problem seed")
    ap.add_argument("--threads", type=int, default=None,
                    help="recorded in the manifest; computations run in one process")
    ap.add_argument("--K", type=float, default=None, help="cutoff level for solve (default: top of ladder)")
    ap.add_argument("--side", choices=("upper", "lower"), default="upper", help="cutoff side for solve")
    return ap


def run(argv):
    """Run one command and return its exit status."""
    ap = _parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_VALIDATION if exc.code else EXIT_OK
    overrides = {"experiment.seed": args.seed} if args.seed is not None else None
    try:
        problem = load_problem(args.spec, overrides)
    except ValidationError as exc:
        print(f"error: {exc.field}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    os.makedirs(args.out, exist_ok=True)
    run_ = _Run(problem, args.out, args.command)
    try:
        status = _HANDLERS[args.command](run_, args)
    except ValidationError as exc:
        print(f"error: {exc.field}: {exc}", file=sys.stderr)
        status = EXIT_VALIDATION
    except NumericalContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        status = EXIT_CONTRACT
    manifest = _manifest(run_, args.spec, status, args.threads)
    with open(os.path.join(args.out, "manifest.json"), "w", encoding="utf-8", newline="\n") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")
    return status


def _json_default(v):
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"cannot serialize {type(v).__name__}")


def main(argv=None):
    sys.exit(run(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
