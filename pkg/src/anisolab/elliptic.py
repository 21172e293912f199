"""Galerkin solves of the perturbed problem, its reduced limit, and the
semilinear variants via damped Picard iteration.

The perturbed linear system is ``(mu M + K_eps) u = F`` and the limit system
is ``(mu M + K22) u = F``.  For a custom monotone reaction the fixed point

    u  <-  solve(K u = F - B(u_prev)),     damped by theta in (0, 1],

is iterated until ``||K u + B(u) - F|| <= tol ||F||``, where ``B(u)`` is the
load vector of the reaction evaluated pointwise at quadrature nodes (no mass
lumping).  The damping schedule (halve theta on a residual increase, at most
six times) is a practical construction of this package, not a prescription
taken from the underlying theory.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.sparse.linalg as spla

from .assembly import AssembledProblem, assemble_system, _tables
from .coefficients import CoefficientField, ConstantLedger, ReactionSpec, SourceField
from .linsolve import NonConvergenceError, SolverConfig, solve
from .spaces import GalerkinSpace, TensorDomain

__all__ = [
    "LIMIT",
    "ProblemSpec",
    "GalerkinSolution",
    "solve_linear",
    "solve_semilinear",
    "apriori_check",
    "AprioriReport",
    "export_solution_csv",
]

GALERKIN_RESIDUAL_TOL = 1e-9


class _Limit:
    """Sentinel for the reduced problem (formal epsilon -> 0)."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "LIMIT"


LIMIT = _Limit()


@dataclass
class ProblemSpec:
    """One elliptic problem instance: domain, coefficients, source, reaction."""

    domain: TensorDomain
    coefficients: CoefficientField
    source: SourceField
    reaction: ReactionSpec = field(default_factory=ReactionSpec.zero)
    epsilon: Union[float, _Limit] = LIMIT

    def __post_init__(self):
        if self.epsilon is not LIMIT:
            eps = float(self.epsilon)
            if not (0.0 < eps <= 1.0):
                raise ValueError(f"epsilon must lie in (0,1], got {eps!r}")
            self.epsilon = eps

    @property
    def is_limit(self) -> bool:
        return self.epsilon is LIMIT

    def with_epsilon(self, epsilon) -> "ProblemSpec":
        return ProblemSpec(self.domain, self.coefficients, self.source,
                           self.reaction, epsilon)

    def with_reaction(self, reaction) -> "ProblemSpec":
        return ProblemSpec(self.domain, self.coefficients, self.source,
                           reaction, self.epsilon)


@dataclass
class GalerkinSolution:
    space: GalerkinSpace
    coeffs: np.ndarray
    kind: str  # "perturbed" | "limit"
    epsilon: Optional[float] = None
    picard_iterations: int = 0
    final_residual: float = 0.0  # relative to ||F||
    residual_history: Optional[list] = None  # accepted Picard residuals

    def values(self, x1, x2):
        return self.space.evaluate(self.coeffs, x1, x2)


def _system_matrix(problem: ProblemSpec, system: AssembledProblem):
    K = system.limit_stiffness() if problem.is_limit else system.stiffness(problem.epsilon)
    if problem.reaction.kind == "linear":
        K = (K + problem.reaction.mu * system.M).tocsr()
    return K


def solve_linear(problem: ProblemSpec, space: GalerkinSpace,
                 solver: Optional[SolverConfig] = None,
                 system: Optional[AssembledProblem] = None) -> GalerkinSolution:
    """Solve the linear problem (zero or linear reaction) on the space."""
    if problem.reaction.kind == "custom":
        raise ValueError("custom reactions require solve_semilinear")
    if system is None:
        system = assemble_system(space, problem.coefficients, problem.source)
    F = system.F if system.F is not None else np.zeros(space.dim)
    K = _system_matrix(problem, system)
    result = solve(K, F, solver)
    norm_f = np.linalg.norm(F)
    rel = result.residual_norm / norm_f if norm_f else 0.0
    if rel > GALERKIN_RESIDUAL_TOL:
        raise NonConvergenceError(result.x, result.residual_norm, result.iterations)
    kind = "limit" if problem.is_limit else "perturbed"
    return GalerkinSolution(space, result.x, kind,
                            None if problem.is_limit else problem.epsilon,
                            final_residual=rel)


def _quadrature_values(space: GalerkinSpace, coeffs):
    _, _, V1, _ = _tables(space, 1)
    _, _, V2, _ = _tables(space, 2)
    U = coeffs.reshape(space.basis1.dim, space.basis2.dim)
    return V1 @ U @ V2.T


def reaction_load(space: GalerkinSpace, reaction: ReactionSpec, coeffs):
    """Load vector of beta(u_h), with u_h evaluated at quadrature points."""
    _, w1, V1, _ = _tables(space, 1)
    _, w2, V2, _ = _tables(space, 2)
    vals = reaction.beta(_quadrature_values(space, coeffs))
    return (V1.T @ ((w1[:, None] * w2[None, :] * vals) @ V2)).ravel()


def solve_semilinear(problem: ProblemSpec, space: GalerkinSpace,
                     damping: float = 1.0, tol: float = 1e-9,
                     max_picard: int = 200,
                     system: Optional[AssembledProblem] = None,
                     initial=None) -> GalerkinSolution:
    """Damped Picard iteration for a custom monotone Lipschitz reaction."""
    if not (0.0 < damping <= 1.0):
        raise ValueError("damping must lie in (0, 1]")
    if problem.reaction.kind != "custom":
        raise ValueError("solve_semilinear expects a custom reaction")
    if system is None:
        system = assemble_system(space, problem.coefficients, problem.source)
    F = system.F if system.F is not None else np.zeros(space.dim)
    K = system.limit_stiffness() if problem.is_limit else system.stiffness(problem.epsilon)
    lu = spla.splu(K.tocsc())
    norm_f = np.linalg.norm(F)
    scale = norm_f if norm_f else 1.0

    def residual(u):
        return np.linalg.norm(K @ u + reaction_load(space, problem.reaction, u) - F)

    u = np.zeros(space.dim) if initial is None else np.array(initial, dtype=float)
    res = residual(u)
    history = [res]
    theta = damping
    halvings = 0
    for it in range(1, max_picard + 1):
        step = lu.solve(F - reaction_load(space, problem.reaction, u))
        u_new = (1.0 - theta) * u + theta * step
        res_new = residual(u_new)
        if res_new > res and halvings < 6:
            theta *= 0.5
            halvings += 1
            continue
        u, res = u_new, res_new
        history.append(res)
        if res <= tol * scale:
            kind = "limit" if problem.is_limit else "perturbed"
            return GalerkinSolution(space, u, kind,
                                    None if problem.is_limit else problem.epsilon,
                                    picard_iterations=it,
                                    final_residual=res / scale,
                                    residual_history=history)
    raise NonConvergenceError(
        u, res, max_picard, hint="retry with a smaller damping factor")


@dataclass
class BoundCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def passed(self) -> bool:
        return self.lhs <= self.rhs * (1.0 + 1e-9) + 1e-12


@dataclass
class AprioriReport:
    checks: list
    norms: dict

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)


def apriori_check(sol: GalerkinSolution, ledger: ConstantLedger,
                  problem: ProblemSpec,
                  system: Optional[AssembledProblem] = None) -> AprioriReport:
    """Check the energy and reaction bounds of a converged solve.

    Perturbed solves are checked against the full-gradient and reaction
    bounds with the 1/eps^2 factors; limit solves against the second-direction
    bounds.  Both sides of every inequality are reported.
    """
    if system is None:
        system = assemble_system(sol.space, problem.coefficients, problem.source)
    u = sol.coeffs
    lam = ledger.lam
    norm_f = problem.source.norm_l2(problem.domain)
    grad = system.norm(u, "grad")
    grad2 = system.norm(u, "x2")
    beta_vals = problem.reaction.beta(_quadrature_values(sol.space, u))
    _, w1, _, _ = _tables(sol.space, 1)
    _, w2, _, _ = _tables(sol.space, 2)
    beta_norm = float(np.sqrt(max(w1 @ (beta_vals ** 2) @ w2, 0.0)))
    if problem.reaction.kind == "zero":
        M = 0.0
    elif problem.reaction.kind == "linear":
        M = problem.reaction.mu
    else:
        M = problem.reaction.growth

    checks = []
    if sol.kind == "perturbed":
        eps = sol.epsilon
        checks.append(BoundCheck(
            "full_gradient", grad,
            ledger.poincare_domain * norm_f / (lam * eps ** 2)))
        checks.append(BoundCheck(
            "reaction_norm", beta_norm,
            (M / eps ** 2) * (ledger.area_sqrt
                              + ledger.poincare_domain ** 2 * norm_f / lam)))
    else:
        checks.append(BoundCheck(
            "grad_x2", grad2,
            ledger.poincare_omega2 * norm_f / lam))
        checks.append(BoundCheck(
            "reaction_norm", beta_norm,
            M * (ledger.area_sqrt + ledger.poincare_omega2 ** 2 * norm_f / lam)))
    norms = {"grad": grad, "grad_x2": grad2, "reaction": beta_norm,
             "source": norm_f}
    return AprioriReport(checks, norms)


def export_solution_csv(sol: GalerkinSolution, path, n1: int = 65, n2: int = 65):
    """Write the solution on a uniform lattice as ``x1,x2,u`` rows."""
    d = sol.space.domain
    x1 = np.linspace(d.omega1[0], d.omega1[1], n1)
    x2 = np.linspace(d.omega2[0], d.omega2[1], n2)
    U = sol.values(x1, x2)
    with open(path, "w", newline="") as fh:
        fh.write("x1,x2,u\n")
        for i in range(n1):
            for j in range(n2):
                fh.write(f"{x1[i]:.17e},{x2[j]:.17e},{U[i, j]:.17e}\n")
