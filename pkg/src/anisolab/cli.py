"""Command line interface: parse a config, run the requested study, and emit
deterministic CSV/JSON reports.

Exit codes: 0 when every requested verdict passes, 1 when a verdict fails,
2 on a structured refusal (missing hypothesis flags) or a configuration
error.  Repeated runs of the same config produce byte-identical outputs;
wall-clock timings are therefore never written into report files (pass
``--timings`` to get them on stderr).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import diagnostics, semigroup
from .assembly import assemble_system
from .coefficients import (HypothesisNotSatisfied, compute_constants,
                           LEDGER_FORMULAS)
from .config import (ConfigError, ExperimentConfig, build_problem_objects,
                     emit_config, load_config, make_space)
from .elliptic import (LIMIT, ProblemSpec, apriori_check, export_solution_csv,
                       solve_linear, solve_semilinear)
from .expressions import parse_expression

__all__ = ["main", "run_config"]

_SUBCOMMAND_KINDS = {
    "solve": "solve",
    "rate-study": "rate",
    "cea-check": "cea",
    "ap-check": "ap",
    "dq-check": "dq",
    "resolvent-study": "resolvent",
    "semigroup-study": "semigroup",
    "parabolic-study": "parabolic",
    "constants": "constants",
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _problem_from(cfg: ExperimentConfig, epsilon):
    domain, A, source, reaction = build_problem_objects(cfg)
    return ProblemSpec(domain, A, source, reaction, epsilon)


def _run_solve(cfg, outdir, summary):
    problem = _problem_from(cfg, cfg.study.epsilon)
    space = make_space(cfg, problem.domain)
    system = assemble_system(space, problem.coefficients, problem.source)
    if problem.reaction.kind == "custom":
        sol = solve_semilinear(problem, space, damping=cfg.study.damping,
                               system=system)
    else:
        sol = solve_linear(problem, space, system=system)
    ledger = compute_constants(problem.coefficients, problem.domain,
                               problem.source, problem.reaction)
    apriori = apriori_check(sol, ledger, problem, system)
    summary["solve"] = {
        "dim": space.dim,
        "epsilon": cfg.study.epsilon,
        "final_residual": sol.final_residual,
        "picard_iterations": sol.picard_iterations,
        "apriori": {c.name: {"lhs": c.lhs, "rhs": c.rhs, "passed": c.passed}
                    for c in apriori.checks},
    }
    export = cfg.study.export or "grid.csv"
    export_solution_csv(sol, outdir / export)
    summary["verdicts"]["residual_contract"] = True
    summary["verdicts"]["apriori_bounds"] = apriori.all_passed


def _run_rate(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    space = make_space(cfg, problem.domain)
    ledger = compute_constants(problem.coefficients, problem.domain,
                               problem.source, problem.reaction)
    study = diagnostics.rate_study(problem, space, list(cfg.study.epsilons),
                                   check_bound=cfg.study.check_bound,
                                   ledger=ledger)
    diagnostics.write_rate_csv(study, outdir / "rate.csv")
    summary["rate"] = {
        "epsilons": study.epsilons, "e_x1": study.e_x1, "e_x2": study.e_x2,
        "e_l2": study.e_l2, "slope": study.slope, "bound": study.bound,
        "bound_galerkin": study.bound_galerkin,
    }
    if study.refusal:
        summary["refusals"].append({"study": "rate", "reason": study.refusal})
        return
    summary["verdicts"]["rate_slope_ge_0.95"] = study.slope >= 0.95
    if cfg.study.check_bound:
        summary["verdicts"]["rate_bound"] = bool(study.bound_verdict)
    if cfg.problem.beta == "linear":
        mu_study = diagnostics.linear_reaction_rate_study(
            problem, space, list(cfg.study.epsilons), mus=cfg.study.mus)
        if mu_study.refusal:
            summary["refusals"].append({"study": "rate-linear-reaction",
                                        "reason": mu_study.refusal})
            return
        summary["rate_linear_reaction"] = {
            "mus": mu_study.mus,
            "e_x2": {str(mu): s.e_x2 for mu, s in mu_study.studies.items()},
            "scaled": {str(mu): v for mu, v in mu_study.scaled.items()},
        }
        summary["verdicts"]["rate_mu_bounded"] = bool(mu_study.mu_bounded)
        summary["verdicts"]["rate_mu_shrink"] = bool(mu_study.mu_shrink)


def _run_cea(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    spaces = [make_space(cfg, problem.domain, m1=n, m2=n)
              for n in cfg.study.sizes]
    report = diagnostics.cea_check(spaces, problem, damping=cfg.study.damping)
    with open(outdir / "cea.csv", "w", newline="") as fh:
        fh.write("dim,galerkin_error,best_error,bound_rhs,passed\n")
        for r in report.rows:
            fh.write(f"{r.dim},{r.galerkin_error:.17e},{r.best_error:.17e},"
                     f"{r.bound_rhs:.17e},{str(r.passed).lower()}\n")
    summary["cea"] = {
        "kind": report.kind,
        "rows": [{"dim": r.dim, "galerkin_error": r.galerkin_error,
                  "best_error": r.best_error, "bound_rhs": r.bound_rhs,
                  "passed": r.passed} for r in report.rows],
    }
    summary["verdicts"]["cea_bound"] = report.all_passed


def _run_ap(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    spaces = [make_space(cfg, problem.domain, m1=n, m2=n)
              for n in cfg.study.sizes]
    report = diagnostics.ap_diagram(problem, list(cfg.study.epsilons), spaces)
    diagnostics.write_ap_csv(report, outdir / "ap_grid.csv")
    summary["ap"] = {
        "epsilons": report.epsilons, "sizes": report.sizes,
        "row_trace": report.row_trace, "col_trace": report.col_trace,
        "commutation_gap": report.commutation_gap,
        "finest_error": report.finest_error,
    }
    summary["verdicts"]["ap_row_monotone"] = report.row_monotone
    summary["verdicts"]["ap_col_monotone"] = report.col_monotone
    summary["verdicts"]["ap_gap"] = report.gap_ok


def _run_dq(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    space = make_space(cfg, problem.domain)
    report = diagnostics.difference_quotient_bound(problem, space)
    summary["dq"] = {
        "lhs": report.lhs, "grad_f": report.grad_f, "rhs": report.rhs,
        "rhs_statement": report.rhs_statement,
        "rhs_inspace": report.rhs_inspace,
        "statement_passed": report.statement_passed,
    }
    summary["verdicts"]["dq_bound"] = report.passed


def _run_resolvent(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    space = make_space(cfg, problem.domain)
    study = semigroup.resolvent_deviation(space, problem.coefficients,
                                          list(cfg.study.epsilons),
                                          cfg.study.mu, problem.source)
    if study.refusal:
        summary["refusals"].append({"study": "resolvent",
                                    "reason": study.refusal})
        return
    with open(outdir / "resolvent.csv", "w", newline="") as fh:
        fh.write("epsilon,deviation\n")
        for eps, d in zip(study.epsilons, study.deviations):
            fh.write(f"{eps:.17e},{d:.17e}\n")
    summary["resolvent"] = {"epsilons": study.epsilons,
                            "deviations": study.deviations,
                            "slope": study.slope}
    summary["verdicts"]["resolvent_slope_ge_0.95"] = study.slope >= 0.95


def _run_semigroup(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    space = make_space(cfg, problem.domain)
    from .assembly import project
    g = project(space, problem.source)
    study = semigroup.semigroup_deviation_study(
        space, problem.coefficients, list(cfg.study.epsilons), g,
        cfg.study.T, stepper=cfg.study.stepper, steps=cfg.study.steps,
        yosida_mu=cfg.study.yosida_mu if cfg.study.stepper == "yosida" else None)
    semigroup.write_deviation_trace_csv(study, outdir / "deviation_trace.csv")
    semigroup.write_deviation_summary_csv(study, outdir / "deviation_summary.csv")
    summary["semigroup"] = {
        "T": study.T, "slope": study.slope,
        "rows": [{"epsilon": r.epsilon, "deviation": r.deviation,
                  "deviation_2t": r.deviation_2t, "steps": r.steps,
                  "certified_error": r.certified_error} for r in study.rows],
    }
    summary["verdicts"]["semigroup_slope_ge_0.95"] = study.slope >= 0.95
    summary["verdicts"]["semigroup_certified"] = study.certified
    summary["verdicts"]["semigroup_linear_in_T"] = study.linear_in_horizon


def _run_parabolic(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    space = make_space(cfg, problem.domain)
    from .assembly import assemble_load, project
    u0_expr = cfg.study.u0 or cfg.problem.f
    u0_fn = parse_expression(u0_expr)
    u0 = project(space, lambda x1, x2: u0_fn(x1=x1, x2=x2))
    coeff = cfg.study.u0_eps_coeff

    def u0_of_eps(eps):
        return (1.0 + coeff * eps) * u0

    source_loads = None
    if cfg.study.source is not None:
        sexpr = parse_expression(cfg.study.source)

        def source_loads(t):
            return assemble_load(space,
                                 lambda x1, x2: sexpr(x1=x1, x2=x2, t=t))

    report = semigroup.parabolic_convergence(
        space, problem.coefficients, u0_of_eps, u0,
        list(cfg.study.epsilons), cfg.study.T, stepper=cfg.study.stepper,
        steps=cfg.study.steps, source_loads=source_loads, tol=cfg.study.tol)
    with open(outdir / "parabolic.csv", "w", newline="") as fh:
        fh.write("epsilon,initial_gap,sup_deviation\n")
        for r in report.rows:
            fh.write(f"{r.epsilon:.17e},{r.initial_gap:.17e},"
                     f"{r.sup_deviation:.17e}\n")
    summary["parabolic"] = {
        "rows": [{"epsilon": r.epsilon, "initial_gap": r.initial_gap,
                  "sup_deviation": r.sup_deviation} for r in report.rows],
        "tol": report.tol,
    }
    summary["verdicts"]["parabolic_monotone"] = report.monotone
    summary["verdicts"]["parabolic_below_tol"] = report.final_below_tol


def _run_constants(cfg, outdir, summary):
    problem = _problem_from(cfg, LIMIT)
    ledger = compute_constants(problem.coefficients, problem.domain,
                               problem.source, problem.reaction)
    table = ledger.as_dict()
    summary["constants"] = table
    lines = ["constant ledger:"]
    width = max(len(k) for k in table)
    for name, value in table.items():
        lines.append(f"  {name:<{width}} = {value:.12g}    [{LEDGER_FORMULAS[name]}]")
    summary["_stdout"] = "\n".join(lines)


_RUNNERS = {
    "solve": _run_solve,
    "rate": _run_rate,
    "cea": _run_cea,
    "ap": _run_ap,
    "dq": _run_dq,
    "resolvent": _run_resolvent,
    "semigroup": _run_semigroup,
    "parabolic": _run_parabolic,
    "constants": _run_constants,
}


def run_config(cfg: ExperimentConfig, outdir) -> tuple[dict, int]:
    """Execute the study named by the config; returns (summary, exit code)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = {
        "study": cfg.study.kind,
        "config": emit_config(cfg),
        "verdicts": {},
        "refusals": [],
    }
    try:
        _RUNNERS[cfg.study.kind](cfg, outdir, summary)
        ledger = None
        if "constants" not in summary:
            problem = _problem_from(cfg, LIMIT)
            ledger = compute_constants(problem.coefficients, problem.domain,
                                       problem.source, problem.reaction)
            summary["constants"] = ledger.as_dict()
    except HypothesisNotSatisfied as exc:
        summary["refusals"].append({"study": cfg.study.kind,
                                    "missing": list(exc.missing)})
    stdout_text = summary.pop("_stdout", None)
    if "json" in cfg.output.formats:
        payload = json.dumps(_jsonable(summary), sort_keys=True, indent=2) + "\n"
        (Path(outdir) / "summary.json").write_text(payload)
    if stdout_text:
        print(stdout_text)
    if summary["refusals"]:
        return summary, 2
    all_pass = all(summary["verdicts"].values()) if summary["verdicts"] else True
    return summary, 0 if all_pass else 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="anisolab",
        description="Studies of anisotropic singularly perturbed problems "
                    "on tensor-product domains.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(_SUBCOMMAND_KINDS) + ["run"]:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a .cfg file")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--epsilon-list", default=None,
                       help="comma separated epsilons override")
        p.add_argument("--basis", default=None, choices=("sine", "q1"),
                       help="basis kind override for both directions")
        p.add_argument("--export", default=None,
                       help="lattice export file name (solve only)")
        p.add_argument("--timings", action="store_true",
                       help="print wall time to stderr")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command != "run":
        cfg.study.kind = _SUBCOMMAND_KINDS[args.command]
    if args.epsilon_list:
        try:
            eps = tuple(float(p) for p in args.epsilon_list.split(","))
        except ValueError:
            print("error: bad --epsilon-list", file=sys.stderr)
            return 2
        if any(not (0.0 < e <= 1.0) for e in eps):
            print("error: epsilon must lie in (0,1]", file=sys.stderr)
            return 2
        cfg.study.epsilons = eps
    if args.basis:
        cfg.discretization.basis1 = args.basis
        cfg.discretization.basis2 = args.basis
    if args.export:
        cfg.study.export = args.export
    outdir = args.out or cfg.output.directory
    start = time.perf_counter()
    try:
        summary, code = run_config(cfg, outdir)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.timings:
        print(f"elapsed: {time.perf_counter() - start:.3f}s", file=sys.stderr)
    for item in summary["refusals"]:
        print(f"refused: {item}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
