"""Error norms, convergence-rate studies, quasi-optimality checks, the
commuting-limits diagram, and the difference-quotient bound.

Unless a closed-form reference is supplied, rate studies compare the
perturbed Galerkin solution against the limit Galerkin solution on the same
space, so the discretization error largely cancels and the measured quantity
isolates the perturbation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .assembly import AssembledProblem, assemble_system, norm_matrices, project, _tables
from .coefficients import HypothesisNotSatisfied
from .elliptic import (LIMIT, GalerkinSolution, ProblemSpec, solve_linear,
                       solve_semilinear)
from .linsolve import SolverConfig
from .parallel import parallel_map
from .spaces import GalerkinSpace, embedding_matrix

__all__ = [
    "error_norms",
    "errors_vs_function",
    "fit_slope",
    "RateStudy",
    "rate_study",
    "CeaReport",
    "cea_check",
    "APDiagramReport",
    "ap_diagram",
    "DQReport",
    "difference_quotient_bound",
    "LinearReactionStudy",
    "linear_reaction_rate_study",
    "grad1_functional",
    "write_rate_csv",
    "write_ap_csv",
]

SLOPE_FLOOR = 1e3 * np.finfo(float).eps  # errors below this are quadrature noise


def error_norms(u_a: GalerkinSolution, u_b: GalerkinSolution):
    """Seminorm/norm triple ``(e_x1, e_x2, e_l2)`` of the difference.

    Both solutions must live on the same space.
    """
    if u_a.space is not u_b.space:
        raise ValueError("solutions live on different spaces")
    M, G1, G2 = norm_matrices(u_a.space)
    d = u_a.coeffs - u_b.coeffs

    def norm(G):
        return float(np.sqrt(max(d @ (G @ d), 0.0)))

    return norm(G1), norm(G2), norm(M)


def errors_vs_function(space: GalerkinSpace, coeffs, u_fn, du1_fn, du2_fn):
    """Quadrature seminorm/norm triple of ``u_h - u`` for a closed-form ``u``.

    Needed when the reference does not belong to the space (manufactured
    solutions, counterexample studies).
    """
    _, w1, V1, D1 = _tables(space, 1)
    _, w2, V2, D2 = _tables(space, 2)
    U = np.asarray(coeffs, dtype=float).reshape(space.basis1.dim,
                                                space.basis2.dim)
    p1 = space._quad1[0]
    p2 = space._quad2[0]
    X1, X2 = np.meshgrid(p1, p2, indexing="ij")

    def quad_norm(diff):
        return float(np.sqrt(max(w1 @ (diff ** 2) @ w2, 0.0)))

    e_x1 = quad_norm(D1 @ U @ V2.T - np.asarray(du1_fn(X1, X2), dtype=float))
    e_x2 = quad_norm(V1 @ U @ D2.T - np.asarray(du2_fn(X1, X2), dtype=float))
    e_l2 = quad_norm(V1 @ U @ V2.T - np.asarray(u_fn(X1, X2), dtype=float))
    return e_x1, e_x2, e_l2


def fit_slope(epsilons, errors, floor: float = SLOPE_FLOOR) -> float:
    """Least-squares slope of log(error) against log(epsilon).

    Entries below the noise floor are excluded; returns nan with fewer than
    two usable points.
    """
    eps = np.asarray(epsilons, dtype=float)
    err = np.asarray(errors, dtype=float)
    keep = err > floor
    if keep.sum() < 2:
        return float("nan")
    return float(np.polyfit(np.log(eps[keep]), np.log(err[keep]), 1)[0])


def _require_flags(problem: ProblemSpec, need_mixed: bool = False):
    missing = []
    A = problem.coefficients
    f = problem.source
    if not A.offdiag_derivs_bounded:
        missing.append("offdiag_derivs_bounded")
    if not A.a22_depends_only_on_x2:
        missing.append("a22_depends_only_on_x2")
    if not f.grad_x1_in_l2:
        missing.append("grad_x1_in_l2")
    if not f.slices_vanish_x1:
        missing.append("slices_vanish_x1")
    if need_mixed and not A.offdiag_mixed_deriv_in_l2:
        missing.append("offdiag_mixed_deriv_in_l2")
    return missing


@dataclass
class RateStudy:
    epsilons: list
    e_x1: list
    e_x2: list
    e_l2: list
    slope: float
    bound: Optional[list] = None          # (C1 C3 ||d1 f|| + C2 ||f||) eps
    bound_galerkin: Optional[list] = None  # (C1 ||d1 u_V|| + C2 ||f||) eps
    bound_verdict: Optional[bool] = None
    refusal: Optional[str] = None

    @property
    def passed(self) -> bool:
        return bool(self.bound_verdict) and self.refusal is None


def rate_study(problem: ProblemSpec, space: GalerkinSpace,
               epsilons: Sequence[float], reference="limit",
               check_bound: bool = True, ledger=None,
               system: Optional[AssembledProblem] = None,
               solver: Optional[SolverConfig] = None) -> RateStudy:
    """Errors against the limit solution for a decreasing epsilon family.

    ``reference`` is either ``"limit"`` (limit Galerkin solve on the same
    space) or an explicit coefficient vector.  When ``check_bound`` is set
    the rate bound is evaluated with ledger constants, provided the
    hypothesis flags hold; otherwise the verdict is refused with a reason.
    """
    if system is None:
        system = assemble_system(space, problem.coefficients, problem.source)
    if isinstance(reference, str) and reference == "limit":
        u_ref = solve_linear(problem.with_epsilon(LIMIT), space, solver, system)
    else:
        u_ref = GalerkinSolution(space, np.asarray(reference, dtype=float), "limit")

    def one(eps):
        u_eps = solve_linear(problem.with_epsilon(eps), space, solver, system)
        return error_norms(u_eps, u_ref)

    results = parallel_map(one, list(epsilons))
    e_x1 = [r[0] for r in results]
    e_x2 = [r[1] for r in results]
    e_l2 = [r[2] for r in results]
    slope = fit_slope(epsilons, e_x2)
    study = RateStudy(list(epsilons), e_x1, e_x2, e_l2, slope)

    if check_bound:
        missing = _require_flags(problem)
        if missing:
            study.refusal = "missing hypotheses: " + ", ".join(missing)
            return study
        if ledger is None:
            from .coefficients import compute_constants
            ledger = compute_constants(problem.coefficients, problem.domain,
                                       problem.source, problem.reaction)
        norm_f = ledger.norm_f or problem.source.norm_l2(problem.domain)
        grad_f = problem.source.norm_grad_x1(problem.domain)
        const = (ledger.rate_const_grad * ledger.dq_const * grad_f
                 + ledger.rate_const_source * norm_f)
        grad_uv = float(np.sqrt(max(u_ref.coeffs @ (system.G1 @ u_ref.coeffs), 0.0)))
        const_galerkin = (ledger.rate_const_grad * grad_uv
                          + ledger.rate_const_source * norm_f)
        study.bound = [const * e for e in epsilons]
        study.bound_galerkin = [const_galerkin * e for e in epsilons]
        study.bound_verdict = all(
            e2 <= b * (1.0 + 1e-9) + 1e-12 for e2, b in zip(e_x2, study.bound))
    return study


@dataclass
class CeaRow:
    label: str
    dim: int
    galerkin_error: float
    best_error: float
    bound_constant: float
    bound_rhs: float
    sqrt_form: bool

    @property
    def passed(self) -> bool:
        return self.galerkin_error <= self.bound_rhs * (1.0 + 1e-9) + 1e-12


@dataclass
class CeaReport:
    rows: list
    kind: str  # "limit-linear" | "perturbed-linear" | "limit-sqrt"

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.rows)


def _best_approx_error(G_ref, u_ref_coeffs, E):
    """Error of the G-orthogonal projection of the reference onto range(E)."""
    GE = G_ref @ E
    gram = E.T @ GE
    rhs = E.T @ (G_ref @ u_ref_coeffs)
    c = np.linalg.solve(gram, rhs)
    d = u_ref_coeffs - E @ c
    return float(np.sqrt(max(d @ (G_ref @ d), 0.0)))


def cea_check(spaces: Sequence[GalerkinSpace], problem: ProblemSpec,
              reference_space: Optional[GalerkinSpace] = None,
              ledger=None, damping: float = 0.5,
              solver: Optional[SolverConfig] = None) -> CeaReport:
    """Galerkin error against best-approximation error on nested spaces.

    The reference solution lives on a strictly finer space (default: the
    last space refined once).  Linear problems are checked against the
    quotient constant; a custom reaction is checked against the square-root
    quasi-optimality bound.
    """
    if reference_space is None:
        reference_space = spaces[-1].refine(2)
    ref_system = assemble_system(reference_space, problem.coefficients,
                                 problem.source)
    nonlinear = problem.reaction.kind == "custom"
    if nonlinear:
        if not problem.is_limit:
            raise ValueError("square-root quasi-optimality check targets the "
                             "limit problem")
        u_ref = solve_semilinear(problem, reference_space, damping=damping,
                                 system=ref_system)
    else:
        u_ref = solve_linear(problem, reference_space, solver, ref_system)

    if ledger is None:
        from .coefficients import compute_constants
        ledger = compute_constants(problem.coefficients, problem.domain,
                                   problem.source, problem.reaction)
    if nonlinear:
        kind = "limit-sqrt"
        G_ref = ref_system.G2
        constant = ledger.cea_limit
    elif problem.is_limit:
        kind = "limit-linear"
        G_ref = ref_system.G2
        constant = ledger.cea_limit_linear
    else:
        kind = "perturbed-linear"
        G_ref = (ref_system.G1 + ref_system.G2).tocsr()
        constant = ledger.cea_perturbed_linear / problem.epsilon ** 2

    rows = []
    for space in spaces:
        E = embedding_matrix(space, reference_space)
        system = assemble_system(space, problem.coefficients, problem.source)
        if nonlinear:
            u_v = solve_semilinear(problem, space, damping=damping, system=system)
        else:
            u_v = solve_linear(problem, space, solver, system)
        d = u_ref.coeffs - E @ u_v.coeffs
        gal_err = float(np.sqrt(max(d @ (G_ref @ d), 0.0)))
        best_err = _best_approx_error(G_ref, u_ref.coeffs, E)
        rhs = constant * math.sqrt(best_err) if nonlinear else constant * best_err
        rows.append(CeaRow(
            label=f"{space.basis1.kind}({space.basis1.m})x{space.basis2.kind}({space.basis2.m})",
            dim=space.dim, galerkin_error=gal_err, best_error=best_err,
            bound_constant=constant, bound_rhs=rhs, sqrt_form=nonlinear))
    return CeaReport(rows, kind)


@dataclass
class APDiagramReport:
    epsilons: list
    sizes: list
    grid: np.ndarray        # grid[i, j] = error of (eps_i, space_j) vs reference
    row_trace: list         # fixed finest space, epsilon decreasing
    col_trace: list         # exact limit solves, space growing
    commutation_gap: float
    finest_error: float

    @property
    def row_monotone(self) -> bool:
        return all(b <= a * (1.0 + 1e-9) + 1e-12
                   for a, b in zip(self.row_trace, self.row_trace[1:]))

    @property
    def col_monotone(self) -> bool:
        return all(b <= a * (1.0 + 1e-9) + 1e-12
                   for a, b in zip(self.col_trace, self.col_trace[1:]))

    @property
    def gap_ok(self) -> bool:
        return self.commutation_gap <= 2.0 * self.finest_error + 1e-12


def ap_diagram(problem: ProblemSpec, epsilons: Sequence[float],
               spaces: Sequence[GalerkinSpace],
               reference_space: Optional[GalerkinSpace] = None,
               solver: Optional[SolverConfig] = None) -> APDiagramReport:
    """Fill the (epsilon, space) error grid and both iterated-limit traces.

    One trace follows the finest space while epsilon decreases; the other
    follows the exact discrete limit solves while the space grows.  Both must
    reach the same corner, and their terminal disagreement is the
    commutation gap.
    """
    missing = []
    if not problem.coefficients.offdiag_derivs_bounded:
        missing.append("offdiag_derivs_bounded")
    if missing:
        raise HypothesisNotSatisfied(missing)
    if reference_space is None:
        reference_space = spaces[-1].refine(2)
    ref_system = assemble_system(reference_space, problem.coefficients,
                                 problem.source)
    u_ref = solve_linear(problem.with_epsilon(LIMIT), reference_space, solver,
                         ref_system)
    G_ref = ref_system.G2

    def err_against_ref(space, sol):
        E = embedding_matrix(space, reference_space)
        d = u_ref.coeffs - E @ sol.coeffs
        return float(np.sqrt(max(d @ (G_ref @ d), 0.0)))

    systems = [assemble_system(s, problem.coefficients, problem.source)
               for s in spaces]
    grid = np.zeros((len(epsilons), len(spaces)))
    for j, (space, system) in enumerate(zip(spaces, systems)):
        for i, eps in enumerate(epsilons):
            sol = solve_linear(problem.with_epsilon(eps), space, solver, system)
            grid[i, j] = err_against_ref(space, sol)
    col_trace = []
    for space, system in zip(spaces, systems):
        sol = solve_linear(problem.with_epsilon(LIMIT), space, solver, system)
        col_trace.append(err_against_ref(space, sol))
    row_trace = list(grid[:, -1])
    gap = abs(row_trace[-1] - col_trace[-1])
    finest = max(row_trace[-1], col_trace[-1])
    return APDiagramReport(list(epsilons),
                           [s.basis1.m for s in spaces],
                           grid, row_trace, col_trace, gap, finest)


@dataclass
class DQReport:
    lhs: float                 # ||d1 u_V||
    grad_f: float              # ||d1 f||
    rhs: float                 # dq_const * ||d1 f||
    rhs_statement: float       # dq_const_statement * ||d1 f||  (reported only)
    rhs_inspace: float         # dq_const * ||d1 P_V f||  (projection variant)

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + 1e-9) + 1e-12

    @property
    def statement_passed(self) -> bool:
        return self.lhs <= self.rhs_statement * (1.0 + 1e-9) + 1e-12


def difference_quotient_bound(problem: ProblemSpec, space: GalerkinSpace,
                              ledger=None,
                              solver: Optional[SolverConfig] = None) -> DQReport:
    """First-direction gradient of the limit solve against the shift bound.

    Requires an x2-only a22 and a square-integrable x1-gradient of the
    source.  Both candidate constants are reported; only the larger
    (the one derived by the shift argument) is asserted.
    """
    missing = []
    if not problem.coefficients.a22_depends_only_on_x2:
        missing.append("a22_depends_only_on_x2")
    if not problem.source.grad_x1_in_l2:
        missing.append("grad_x1_in_l2")
    if missing:
        raise HypothesisNotSatisfied(missing)
    system = assemble_system(space, problem.coefficients, problem.source)
    sol = solve_linear(problem.with_epsilon(LIMIT), space, solver, system)
    lhs = system.norm(sol.coeffs, "x1")
    grad_f = problem.source.norm_grad_x1(problem.domain)
    if ledger is None:
        from .coefficients import compute_constants
        ledger = compute_constants(problem.coefficients, problem.domain,
                                   problem.source, problem.reaction)
    f_proj = project(space, problem.source)
    grad_f_inspace = float(np.sqrt(max(f_proj @ (system.G1 @ f_proj), 0.0)))
    return DQReport(
        lhs=lhs,
        grad_f=grad_f,
        rhs=ledger.dq_const * grad_f,
        rhs_statement=ledger.dq_const_statement * grad_f,
        rhs_inspace=ledger.dq_const * grad_f_inspace,
    )


@dataclass
class LinearReactionStudy:
    mus: list
    studies: dict              # mu -> RateStudy (bound not checked per-mu)
    scaled: dict               # mu -> list of e_x2 * mu / eps
    mu_bounded: Optional[bool] = None      # scaled values do not grow with mu
    mu_shrink: Optional[bool] = None       # errors shrink at least like 1/mu
    refusal: Optional[str] = None

    @property
    def passed(self) -> bool:
        return bool(self.mu_bounded and self.mu_shrink) and self.refusal is None


def linear_reaction_rate_study(problem: ProblemSpec, space: GalerkinSpace,
                               epsilons: Sequence[float],
                               mus: Sequence[float] = (1.0, 10.0, 100.0),
                               solver: Optional[SolverConfig] = None
                               ) -> LinearReactionStudy:
    """Rate study with a linear reaction, swept over the reaction slope.

    The explicit constants of the mu-scaled bound are not available, so the
    verdicts are structural: the scaled deviation ``e_x2 * mu / eps`` must
    not grow with mu (5 percent slack), and errors must shrink at least like
    1/mu between consecutive slopes (20 percent slack).
    """
    from .coefficients import ReactionSpec

    study = LinearReactionStudy(list(mus), {}, {})
    missing = _require_flags(problem, need_mixed=True)
    if missing:
        study.refusal = "missing hypotheses: " + ", ".join(missing)
        return study
    system = assemble_system(space, problem.coefficients, problem.source)
    for mu in mus:
        p = problem.with_reaction(ReactionSpec.linear(mu))
        rs = rate_study(p, space, epsilons, check_bound=False, system=system,
                        solver=solver)
        study.studies[mu] = rs
        study.scaled[mu] = [e * mu / eps for e, eps in zip(rs.e_x2, epsilons)]
    mus_sorted = sorted(mus)
    bounded = True
    shrink = True
    for lo, hi in zip(mus_sorted, mus_sorted[1:]):
        for k in range(len(epsilons)):
            if study.scaled[hi][k] > study.scaled[lo][k] * 1.05 + 1e-12:
                bounded = False
            ratio_bound = (lo / hi) * study.studies[lo].e_x2[k] * 1.2 + 1e-12
            if study.studies[hi].e_x2[k] > ratio_bound:
                shrink = False
    study.mu_bounded = bounded
    study.mu_shrink = shrink
    return study


def grad1_functional(space: GalerkinSpace, coeffs, phi):
    """Pairing of the first-direction gradient of a discrete function with a
    smooth test function, evaluated by quadrature."""
    _, w1, V1, D1 = _tables(space, 1)
    _, w2, V2, _ = _tables(space, 2)
    U = np.asarray(coeffs, dtype=float).reshape(space.basis1.dim, space.basis2.dim)
    dvals = D1 @ U @ V2.T
    p1 = space._quad1[0]
    p2 = space._quad2[0]
    X1, X2 = np.meshgrid(p1, p2, indexing="ij")
    return float(w1 @ (dvals * np.asarray(phi(X1, X2), dtype=float)) @ w2)


def _fmt(x) -> str:
    return f"{x:.17e}"


def write_rate_csv(study: RateStudy, path):
    with open(path, "w", newline="") as fh:
        fh.write("epsilon,e_x1,e_x2,e_l2,bound,verdict\n")
        for k, eps in enumerate(study.epsilons):
            bound = study.bound[k] if study.bound is not None else float("nan")
            verdict = ("refused" if study.refusal else
                       "pass" if study.bound_verdict else
                       "fail" if study.bound_verdict is not None else "unchecked")
            fh.write(",".join([_fmt(eps), _fmt(study.e_x1[k]), _fmt(study.e_x2[k]),
                               _fmt(study.e_l2[k]), _fmt(bound), verdict]) + "\n")


def write_ap_csv(report: APDiagramReport, path):
    with open(path, "w", newline="") as fh:
        fh.write("epsilon,n,error\n")
        for i, eps in enumerate(report.epsilons):
            for j, n in enumerate(report.sizes):
                fh.write(f"{_fmt(eps)},{n},{_fmt(report.grid[i, j])}\n")
