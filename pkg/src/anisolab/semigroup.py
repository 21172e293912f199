"""Discrete dissipative generators, resolvent solves, bounded-operator
approximation of the flow, contraction time stepping, and the deviation
studies between the perturbed and limit evolutions.

The flow itself is never exponentiated: backward Euler and Crank-Nicolson
need one prefactorized solve per step, and the bounded-operator route
integrates ``u' = mu^2 R_mu u - mu u`` with classical RK4.  Deviation studies
evolve both generators with the same stepper and step count so the stepper
bias cancels to first order, and certify the remainder by step doubling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (AssembledProblem, assemble_system, mass_1d,
                       project_1d, stiffness_1d)
from .coefficients import CoefficientField, HypothesisNotSatisfied, SourceField
from .diagnostics import fit_slope
from .elliptic import LIMIT
from .parallel import parallel_map
from .spaces import BasisFamily1D, GalerkinSpace

__all__ = [
    "DiscreteGenerator",
    "build_generator",
    "build_generator_1d",
    "EvolutionConfig",
    "Trajectory",
    "evolve",
    "resolvent_apply",
    "ResolventDeviationStudy",
    "resolvent_deviation",
    "SemigroupDeviationStudy",
    "semigroup_deviation_study",
    "StepperAccuracyError",
    "TensorOracleReport",
    "tensor_semigroup_oracle_check",
    "ParabolicReport",
    "parabolic_convergence",
    "write_deviation_trace_csv",
    "write_deviation_summary_csv",
]


class StepperAccuracyError(RuntimeError):
    """The stepper error cannot be made subdominant within the step budget."""

    def __init__(self, required_steps: int, budget: int):
        super().__init__(
            f"stepper error not subdominant within {budget} steps; "
            f"an estimated {required_steps} steps would be needed")
        self.required_steps = required_steps


@dataclass
class DiscreteGenerator:
    """Mass and stiffness pair representing a maximal dissipative operator."""

    M: sp.csr_matrix
    K: sp.csr_matrix
    kind: str  # "perturbed" | "limit"
    epsilon: Optional[float] = None
    space: Optional[GalerkinSpace] = None

    @property
    def dim(self) -> int:
        return self.M.shape[0]

    def m_norm(self, v) -> float:
        v = np.asarray(v, dtype=float)
        return float(np.sqrt(max(v @ (self.M @ v), 0.0)))

    def dissipativity_gap(self) -> float:
        """Smallest Rayleigh quotient v'Kv / v'Mv over probe vectors.

        Nonnegative for a dissipative generator (K positive semidefinite).
        """
        rng = np.random.default_rng(1234)
        worst = np.inf
        for _ in range(16):
            v = rng.normal(size=self.dim)
            worst = min(worst, float(v @ (self.K @ v)) / float(v @ (self.M @ v)))
        return worst


def build_generator(space: GalerkinSpace, A: CoefficientField, epsilon,
                    system: Optional[AssembledProblem] = None) -> DiscreteGenerator:
    """Generator of the perturbed flow (finite epsilon) or the limit flow."""
    if system is None:
        system = assemble_system(space, A)
    if epsilon is LIMIT:
        return DiscreteGenerator(system.M, system.limit_stiffness(), "limit",
                                 None, space)
    return DiscreteGenerator(system.M, system.stiffness(float(epsilon)),
                             "perturbed", float(epsilon), space)


def build_generator_1d(family: BasisFamily1D, a22_of_x2: Callable,
                       order: int = 4) -> DiscreteGenerator:
    """1D limit generator on the second direction alone."""
    return DiscreteGenerator(mass_1d(family, order),
                             stiffness_1d(family, a22_of_x2, order),
                             "limit", None, None)


@dataclass
class EvolutionConfig:
    T: float
    stepper: str = "be"  # "be" | "cn" | "yosida"
    steps: int = 256
    yosida_mu: Optional[float] = None
    sample_times: Optional[Sequence[float]] = None  # default: all step times
    source: Optional[Callable] = None  # t -> load vector (backward Euler only)

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("final time must be nonnegative")
        if self.T > 0 and self.steps < 1:
            raise ValueError("positive horizon needs at least one step")
        if self.stepper not in ("be", "cn", "yosida"):
            raise ValueError(f"unknown stepper {self.stepper!r}")
        if self.stepper == "yosida" and (self.yosida_mu is None or self.yosida_mu <= 0):
            raise ValueError("the bounded-operator stepper needs yosida_mu > 0")
        if self.source is not None and self.stepper != "be":
            raise ValueError("time-dependent sources are supported by the "
                             "backward Euler stepper only")


@dataclass
class Trajectory:
    times: np.ndarray
    states: np.ndarray  # (len(times), dim)
    step_norms: np.ndarray  # M-norm after every step (contraction record)

    def at(self, t: float) -> np.ndarray:
        idx = int(np.argmin(np.abs(self.times - t)))
        return self.states[idx]


_CONTRACTION_SLACK = {"be": 1e-12, "cn": 1e-10, "yosida": 1e-10}


def _sample_indices(cfg: EvolutionConfig, tau: float):
    if cfg.sample_times is None:
        return np.arange(cfg.steps + 1)
    idx = sorted({int(round(t / tau)) for t in cfg.sample_times})
    for i in idx:
        if not (0 <= i <= cfg.steps):
            raise ValueError("sample time outside [0, T]")
    return np.asarray(idx, dtype=int)


def evolve(gen: DiscreteGenerator, g, cfg: EvolutionConfig,
           check_contraction: bool = True) -> Trajectory:
    """March the contraction flow from initial state ``g``.

    Backward Euler solves ``(M + tau K) u+ = M u (+ tau F)``; Crank-Nicolson
    solves ``(M + tau K / 2) u+ = (M - tau K / 2) u``; the bounded-operator
    route applies classical RK4 to ``u' = mu^2 R_mu u - mu u``.
    """
    u = np.array(g, dtype=float)
    if cfg.T == 0:
        return Trajectory(np.array([0.0]), u[None, :].copy(), np.array([gen.m_norm(u)]))
    tau = cfg.T / cfg.steps
    M = gen.M.tocsc()
    sample = _sample_indices(cfg, tau)
    keep = {int(i) for i in sample}
    states = []
    norms = np.empty(cfg.steps + 1)
    norms[0] = gen.m_norm(u)
    if 0 in keep:
        states.append(u.copy())

    if cfg.stepper == "be":
        lu = spla.splu((gen.M + tau * gen.K).tocsc())

        def step(u, k):
            rhs = M @ u
            if cfg.source is not None:
                rhs = rhs + tau * np.asarray(cfg.source((k + 1) * tau), dtype=float)
            return lu.solve(rhs)
    elif cfg.stepper == "cn":
        lu = spla.splu((gen.M + 0.5 * tau * gen.K).tocsc())
        B = (gen.M - 0.5 * tau * gen.K).tocsr()

        def step(u, k):
            return lu.solve(B @ u)
    else:
        mu = cfg.yosida_mu
        lu = spla.splu((mu * gen.M + gen.K).tocsc())

        def apply_bounded(v):
            return mu * mu * lu.solve(M @ v) - mu * v

        def step(u, k):
            k1 = apply_bounded(u)
            k2 = apply_bounded(u + 0.5 * tau * k1)
            k3 = apply_bounded(u + 0.5 * tau * k2)
            k4 = apply_bounded(u + tau * k3)
            return u + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    slack = _CONTRACTION_SLACK[cfg.stepper]
    for k in range(cfg.steps):
        u = step(u, k)
        norms[k + 1] = gen.m_norm(u)
        if check_contraction and cfg.source is None:
            if norms[k + 1] > norms[k] * (1.0 + slack):
                raise RuntimeError(
                    f"contraction violated at step {k + 1}: "
                    f"{norms[k + 1]:.16e} > {norms[k]:.16e}")
        if (k + 1) in keep:
            states.append(u.copy())
    return Trajectory(sample * tau, np.asarray(states), norms)


def resolvent_apply(gen: DiscreteGenerator, mu: float, f) -> np.ndarray:
    """Solve ``(mu M + K) u = M f`` and assert the 1/mu contraction."""
    if mu <= 0:
        raise ValueError("resolvent parameter must be positive")
    f = np.asarray(f, dtype=float)
    u = spla.spsolve((mu * gen.M + gen.K).tocsc(), gen.M @ f)
    nf = gen.m_norm(f)
    nu = gen.m_norm(u)
    if nu > nf / mu * (1.0 + 1e-10) + 1e-14:
        raise RuntimeError(
            f"resolvent contraction violated: ||u|| = {nu:.16e} > "
            f"||f||/mu = {nf / mu:.16e}")
    return u


@dataclass
class ResolventDeviationStudy:
    epsilons: list
    deviations: list
    slope: float
    refusal: Optional[str] = None

    @property
    def passed(self) -> bool:
        return self.refusal is None and self.slope >= 0.95


def resolvent_deviation(space: GalerkinSpace, A: CoefficientField,
                        epsilons: Sequence[float], mu: float,
                        f: SourceField,
                        check_flags: bool = True) -> ResolventDeviationStudy:
    """Distance between the perturbed and limit resolvents applied to f."""
    if check_flags:
        missing = []
        if not A.offdiag_derivs_bounded:
            missing.append("offdiag_derivs_bounded")
        if not A.a22_depends_only_on_x2:
            missing.append("a22_depends_only_on_x2")
        if not A.offdiag_mixed_deriv_in_l2:
            missing.append("offdiag_mixed_deriv_in_l2")
        if not f.grad_x1_in_l2:
            missing.append("grad_x1_in_l2")
        if not f.slices_vanish_x1:
            missing.append("slices_vanish_x1")
        if missing:
            return ResolventDeviationStudy(list(epsilons), [], float("nan"),
                                           refusal="missing hypotheses: "
                                           + ", ".join(missing))
    system = assemble_system(space, A, f)
    F = system.F
    gen0 = build_generator(space, A, LIMIT, system)
    u0 = spla.spsolve((mu * gen0.M + gen0.K).tocsc(), F)

    def one(eps):
        gen = build_generator(space, A, eps, system)
        u = spla.spsolve((mu * gen.M + gen.K).tocsc(), F)
        d = u - u0
        return float(np.sqrt(max(d @ (system.M @ d), 0.0)))

    deviations = parallel_map(one, list(epsilons))
    return ResolventDeviationStudy(list(epsilons), deviations,
                                   fit_slope(epsilons, deviations))


def _lockstep_deviation(gen_eps: DiscreteGenerator, gen0: DiscreteGenerator,
                        g, T: float, steps: int, stepper: str,
                        yosida_mu: Optional[float]):
    """Evolve both generators together; running sup of the M-norm deviation.

    Returns (sup over [0,T], sup over [0,2T], trace of (t, deviation)).
    The march covers [0, 2T] so the horizon-doubling diagnostic reuses it.
    """
    cfg = EvolutionConfig(T=2.0 * T, stepper=stepper, steps=2 * steps,
                          yosida_mu=yosida_mu)
    traj_eps = evolve(gen_eps, g, cfg)
    traj_0 = evolve(gen0, g, cfg)
    diffs = traj_eps.states - traj_0.states
    M = gen0.M
    devs = np.sqrt(np.maximum(
        np.einsum("ki,ki->k", diffs, (M @ diffs.T).T), 0.0))
    sup_T = float(devs[: steps + 1].max())
    sup_2T = float(devs.max())
    return sup_T, sup_2T, traj_eps.times, devs


@dataclass
class DeviationRow:
    epsilon: float
    deviation: float        # sup over [0, T]
    deviation_2t: float     # sup over [0, 2T]
    steps: int
    certified_error: float  # estimated stepper error of the deviation


@dataclass
class SemigroupDeviationStudy:
    rows: list
    T: float
    slope: float
    stepper: str
    traces: dict  # epsilon -> (times, deviations)

    @property
    def linear_in_horizon(self) -> bool:
        return all(r.deviation_2t <= 2.2 * r.deviation + 1e-14 for r in self.rows)

    @property
    def certified(self) -> bool:
        return all(r.certified_error <= 0.01 * r.deviation + 1e-16 for r in self.rows)

    @property
    def passed(self) -> bool:
        return self.slope >= 0.95 and self.linear_in_horizon and self.certified


def semigroup_deviation_study(space: GalerkinSpace, A: CoefficientField,
                              epsilons: Sequence[float], g, T: float,
                              stepper: str = "be", steps: int = 256,
                              yosida_mu: Optional[float] = None,
                              rel_step_tol: float = 0.01,
                              max_steps: int = 1 << 15,
                              system: Optional[AssembledProblem] = None
                              ) -> SemigroupDeviationStudy:
    """Sup-in-time deviation between perturbed and limit flows per epsilon.

    The step count is doubled until the step-doubling estimate of the
    deviation error drops below ``rel_step_tol`` of the deviation itself;
    the final estimate is recorded as the certified error.
    """
    if system is None:
        system = assemble_system(space, A)
    g = np.asarray(g, dtype=float)
    gen0 = build_generator(space, A, LIMIT, system)

    def one(eps):
        gen = build_generator(space, A, eps, system)
        m = steps
        prev = None
        while True:
            sup_T, sup_2T, times, devs = _lockstep_deviation(
                gen, gen0, g, T, m, stepper, yosida_mu)
            if prev is not None:
                err = abs(sup_T - prev)
                if err <= rel_step_tol * max(sup_T, 1e-300):
                    return DeviationRow(eps, sup_T, sup_2T, m, err), (times, devs)
            if 2 * m > max_steps:
                if prev is None:
                    required = 4 * m
                else:
                    shrink = err / max(rel_step_tol * sup_T, 1e-300)
                    required = int(m * 2 ** math.ceil(math.log2(max(shrink, 2.0))))
                raise StepperAccuracyError(required, max_steps)
            prev = sup_T
            m *= 2

    results = parallel_map(one, list(epsilons))
    rows = [r[0] for r in results]
    traces = {r.epsilon: tr for r, tr in zip(rows, (t for _, t in results))}
    slope = fit_slope(epsilons, [r.deviation for r in rows])
    return SemigroupDeviationStudy(rows, T, slope, stepper, traces)


@dataclass
class TensorOracleReport:
    max_diff: float
    tol: float
    factor_1d: float  # contraction factor of the 1D evolution, for reference

    @property
    def passed(self) -> bool:
        return self.max_diff <= self.tol


def tensor_semigroup_oracle_check(space: GalerkinSpace, A: CoefficientField,
                                  g1, g2, s: float, mu: float,
                                  steps: int = 64,
                                  tol: float = 1e-8) -> TensorOracleReport:
    """Bounded-operator flow of a tensor initial state versus the factored flow.

    Evolves ``g1 (x) g2`` with the 2D limit generator, and independently
    evolves ``g2`` with the 1D second-direction generator; the 2D state must
    equal ``g1 (x) (evolved g2)``.  Requires an x2-only a22.
    """
    if not A.a22_depends_only_on_x2:
        raise HypothesisNotSatisfied(["a22_depends_only_on_x2"])
    order = space.quadrature.order
    c1 = g1 if isinstance(g1, np.ndarray) else project_1d(space.basis1, g1, order)
    c2 = g2 if isinstance(g2, np.ndarray) else project_1d(space.basis2, g2, order)

    gen2d = build_generator(space, A, LIMIT)
    mid1 = 0.5 * (space.domain.omega1[0] + space.domain.omega1[1])
    gen1d = build_generator_1d(
        space.basis2, lambda x2: A.a22(np.full_like(x2, mid1), x2), order)

    cfg2 = EvolutionConfig(T=s, stepper="yosida", steps=steps, yosida_mu=mu)
    if s == 0:
        u2d = np.outer(c1, c2).ravel()
        v1d = c2.copy()
    else:
        u2d = evolve(gen2d, np.outer(c1, c2).ravel(), cfg2).states[-1]
        v1d = evolve(gen1d, c2, cfg2).states[-1]
    expected = np.outer(c1, v1d).ravel()
    max_diff = float(np.max(np.abs(u2d - expected)))
    base = float(np.linalg.norm(c2))
    factor = float(np.linalg.norm(v1d)) / base if base else 0.0
    return TensorOracleReport(max_diff, tol, factor)


@dataclass
class ParabolicRow:
    epsilon: float
    initial_gap: float
    sup_deviation: float


@dataclass
class ParabolicReport:
    rows: list
    tol: float

    @property
    def monotone(self) -> bool:
        devs = [r.sup_deviation for r in self.rows]
        return all(b <= a * (1.0 + 1e-9) + 1e-12 for a, b in zip(devs, devs[1:]))

    @property
    def final_below_tol(self) -> bool:
        return self.rows[-1].sup_deviation <= self.tol

    @property
    def passed(self) -> bool:
        return self.monotone and self.final_below_tol


def parabolic_convergence(space: GalerkinSpace, A: CoefficientField,
                          u0_of_eps: Callable, u0_limit, epsilons,
                          T: float, stepper: str = "be", steps: int = 256,
                          source_loads: Optional[Callable] = None,
                          tol: float = 1e-2,
                          system: Optional[AssembledProblem] = None
                          ) -> ParabolicReport:
    """Evolution deviation with epsilon-dependent data and optional source.

    ``u0_of_eps`` maps epsilon to an initial coefficient vector; the same
    source (if any) drives both evolutions through the backward Euler
    inhomogeneous form.  Epsilons must be given in decreasing order.
    """
    if system is None:
        system = assemble_system(space, A)
    u0_limit = np.asarray(u0_limit, dtype=float)
    gen0 = build_generator(space, A, LIMIT, system)
    cfg = EvolutionConfig(T=T, stepper=stepper, steps=steps, source=source_loads)
    traj0 = evolve(gen0, u0_limit, cfg)
    rows = []
    for eps in epsilons:
        u0 = np.asarray(u0_of_eps(eps), dtype=float)
        gap = gen0.m_norm(u0 - u0_limit)
        gen = build_generator(space, A, eps, system)
        traj = evolve(gen, u0, cfg)
        diffs = traj.states - traj0.states
        sup = max(float(np.sqrt(max(d @ (system.M @ d), 0.0))) for d in diffs)
        rows.append(ParabolicRow(eps, gap, sup))
    return ParabolicReport(rows, tol)


def _fmt(x) -> str:
    return f"{x:.17e}"


def write_deviation_trace_csv(study: SemigroupDeviationStudy, path):
    with open(path, "w", newline="") as fh:
        fh.write("epsilon,t,deviation\n")
        for eps in sorted(study.traces, reverse=True):
            times, devs = study.traces[eps]
            for t, d in zip(times, devs):
                fh.write(f"{_fmt(eps)},{_fmt(t)},{_fmt(d)}\n")


def write_deviation_summary_csv(study: SemigroupDeviationStudy, path):
    with open(path, "w", newline="") as fh:
        fh.write("epsilon,D_sup,slope\n")
        for row in study.rows:
            fh.write(f"{_fmt(row.epsilon)},{_fmt(row.deviation)},{_fmt(study.slope)}\n")
