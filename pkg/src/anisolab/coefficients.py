"""Coefficient fields, reaction terms, sources, and the explicit constants.

The diffusion matrix is a 2x2 block field ``A = [[a11, a12], [a21, a22]]``
with a user-declared ellipticity constant ``lam``; the perturbation scales
the blocks by ``(eps^2, eps, eps, 1)``.  All bound constants used by the
diagnostics are assembled here from interval Poincare constants and sampled
sup-norms of the coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .expressions import Expression
from .spaces import TensorDomain, gauss_rule

__all__ = [
    "ScalarField",
    "as_field",
    "CoefficientField",
    "ReactionSpec",
    "SourceField",
    "BlockScaling",
    "scale_matrix",
    "ConstantLedger",
    "compute_constants",
    "integrate_on_domain",
    "HypothesisNotSatisfied",
]


class HypothesisNotSatisfied(ValueError):
    """A requested bound verdict needs hypothesis flags that are not set."""

    def __init__(self, missing):
        self.missing = tuple(missing)
        super().__init__(
            "bound verdict refused; missing hypotheses: " + ", ".join(self.missing)
        )


class ScalarField:
    """Scalar function of ``(x1, x2)`` with optional declared partials.

    ``deps`` records which variables the value actually depends on; assembly
    uses it to pick factorized Kronecker paths for constant or single-variable
    coefficients.
    """

    def __init__(self, fn: Callable, deps, dx1: Optional["ScalarField"] = None,
                 dx2: Optional["ScalarField"] = None, label: str = ""):
        self._fn = fn
        self.deps = frozenset(deps)
        self.dx1 = dx1
        self.dx2 = dx2
        self.label = label

    def __call__(self, x1, x2):
        out = self._fn(x1, x2)
        return np.broadcast_to(np.asarray(out, dtype=float),
                               np.broadcast_shapes(np.shape(x1), np.shape(x2), np.shape(out)))

    @property
    def is_constant(self) -> bool:
        return not self.deps

    def constant_value(self) -> float:
        if not self.is_constant:
            raise ValueError(f"field {self.label or self._fn} is not constant")
        return float(np.asarray(self._fn(0.0, 0.0)))

    def scaled(self, factor: float) -> "ScalarField":
        return ScalarField(lambda x1, x2, f=self._fn: factor * np.asarray(f(x1, x2), dtype=float),
                           self.deps, label=f"{factor}*{self.label}")

    def __repr__(self):
        return f"ScalarField({self.label or self._fn!r}, deps={sorted(self.deps)})"


def as_field(value, dx1=None, dx2=None, label="") -> ScalarField:
    """Coerce a constant, ``Expression``, callable, or field into a ScalarField."""
    if isinstance(value, ScalarField):
        return value
    if isinstance(value, Expression):
        deps = value.variables & {"x1", "x2"}
        return ScalarField(lambda x1, x2: value(x1=x1, x2=x2), deps,
                           dx1=as_field(dx1) if dx1 is not None else None,
                           dx2=as_field(dx2) if dx2 is not None else None,
                           label=value.source)
    if np.isscalar(value):
        v = float(value)
        return ScalarField(lambda x1, x2: np.full(np.broadcast_shapes(np.shape(x1), np.shape(x2)), v),
                           frozenset(), label=label or repr(v))
    if callable(value):
        # unknown dependence: assume both variables
        return ScalarField(value, {"x1", "x2"},
                           dx1=as_field(dx1) if dx1 is not None else None,
                           dx2=as_field(dx2) if dx2 is not None else None,
                           label=label)
    raise TypeError(f"cannot interpret {value!r} as a scalar field")


def _sample_grid(domain: TensorDomain, n: int):
    x1 = np.linspace(domain.omega1[0], domain.omega1[1], n)
    x2 = np.linspace(domain.omega2[0], domain.omega2[1], n)
    return np.meshgrid(x1, x2, indexing="ij")


def integrate_on_domain(domain: TensorDomain, fn, panels: int = 64, order: int = 4):
    """Composite Gauss integral of ``fn(x1, x2)`` over the rectangle.

    Independent of any Galerkin space quadrature; used for reference norms.
    """
    xg, wg = gauss_rule(order)

    def rule(a, b):
        h = (b - a) / panels
        pts = (a + h * np.arange(panels)[:, None] + h * xg[None, :]).ravel()
        wts = np.tile(h * wg, panels)
        return pts, wts

    p1, w1 = rule(*domain.omega1)
    p2, w2 = rule(*domain.omega2)
    X1, X2 = np.meshgrid(p1, p2, indexing="ij")
    vals = np.asarray(fn(X1, X2), dtype=float)
    return float(w1 @ vals @ w2)


def l2_norm_on_domain(domain: TensorDomain, fn, panels: int = 64, order: int = 4):
    return math.sqrt(max(integrate_on_domain(domain, lambda a, b: np.asarray(fn(a, b)) ** 2,
                                             panels, order), 0.0))


@dataclass
class CoefficientField:
    """The 2x2 coefficient block matrix together with its hypothesis flags."""

    a11: ScalarField
    a12: ScalarField
    a21: ScalarField
    a22: ScalarField
    lam: float
    a22_depends_only_on_x2: bool = True
    offdiag_derivs_bounded: bool = True
    offdiag_mixed_deriv_in_l2: bool = False

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("ellipticity constant must be positive")
        for name in ("a11", "a12", "a21", "a22"):
            setattr(self, name, as_field(getattr(self, name), label=name))

    @classmethod
    def identity(cls) -> "CoefficientField":
        return cls(1.0, 0.0, 0.0, 1.0, lam=1.0,
                   offdiag_mixed_deriv_in_l2=True)

    def entries(self):
        return (self.a11, self.a12, self.a21, self.a22)

    def validate(self, domain: TensorDomain, grid: int = 33, xi_samples: int = 8,
                 seed: int = 0, tol: float = 1e-10):
        """Spot-check ellipticity, boundedness, and the a22 structure flag."""
        X1, X2 = _sample_grid(domain, grid)
        vals = [a(X1, X2) for a in self.entries()]
        for name, v in zip(("a11", "a12", "a21", "a22"), vals):
            if not np.all(np.isfinite(v)):
                raise ValueError(f"coefficient {name} is not finite on the domain")
        rng = np.random.default_rng(seed)
        xi = rng.normal(size=(xi_samples, 2))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        a11, a12, a21, a22 = vals
        for u, v in xi:
            quad = a11 * u * u + (a12 + a21) * u * v + a22 * v * v
            if np.min(quad) < self.lam - tol:
                raise ValueError(
                    f"ellipticity check failed: min A xi.xi = {np.min(quad):.6g} "
                    f"< lam = {self.lam} for xi = ({u:.3f}, {v:.3f})")
        if self.a22_depends_only_on_x2:
            spread = np.max(np.abs(a22 - a22[:1, :]))
            if spread > 1e-12 * max(1.0, np.max(np.abs(a22))):
                raise ValueError(
                    f"a22 declared x2-only but varies with x1 (spread {spread:.3g})")
        return True


@dataclass
class ReactionSpec:
    """Reaction term: zero, linear with slope mu, or a custom monotone function."""

    kind: str  # "zero" | "linear" | "custom"
    mu: float = 0.0
    fn: Optional[Callable] = None
    lipschitz: float = 0.0
    growth: float = 0.0  # M with |beta(s)| <= M (1 + |s|)

    @classmethod
    def zero(cls):
        return cls("zero")

    @classmethod
    def linear(cls, mu: float):
        if mu <= 0:
            raise ValueError("linear reaction needs mu > 0")
        return cls("linear", mu=mu, lipschitz=mu, growth=mu)

    @classmethod
    def custom(cls, fn, lipschitz: float, growth: float):
        return cls("custom", fn=fn, lipschitz=lipschitz, growth=growth)

    @classmethod
    def arctan(cls):
        return cls.custom(np.arctan, lipschitz=1.0, growth=1.0)

    def beta(self, s):
        s = np.asarray(s, dtype=float)
        if self.kind == "zero":
            return np.zeros_like(s)
        if self.kind == "linear":
            return self.mu * s
        return np.asarray(self.fn(s), dtype=float)

    @property
    def is_linear(self) -> bool:
        return self.kind in ("zero", "linear")

    def validate(self, s_max: float = 10.0, samples: int = 401, tol: float = 1e-12):
        s = np.linspace(-s_max, s_max, samples)
        b = self.beta(s)
        b0 = float(self.beta(0.0))
        if abs(b0) > tol:
            raise ValueError(f"reaction must vanish at 0, got {b0:.3g}")
        if np.any(np.diff(b) < -tol):
            raise ValueError("reaction is not nondecreasing on the sample grid")
        M = self.growth if self.kind != "zero" else 0.0
        if np.any(np.abs(b) > M * (1.0 + np.abs(s)) + tol):
            raise ValueError("reaction violates the declared linear growth bound")
        return True


@dataclass
class SourceField:
    """Right-hand side with optional declared x1-partial and hypothesis flags."""

    f: ScalarField
    dx1: Optional[ScalarField] = None
    grad_x1_in_l2: bool = False
    slices_vanish_x1: bool = False  # every x2-slice vanishes at the x1 endpoints

    def __post_init__(self):
        self.f = as_field(self.f, label="f")
        if self.dx1 is not None:
            self.dx1 = as_field(self.dx1, label="f_dx1")
        elif "x1" not in self.f.deps:
            self.dx1 = as_field(0.0, label="f_dx1")

    def norm_l2(self, domain: TensorDomain) -> float:
        return l2_norm_on_domain(domain, self.f)

    def norm_grad_x1(self, domain: TensorDomain) -> float:
        if self.dx1 is None:
            raise HypothesisNotSatisfied(["source x1-partial (declare dx1)"])
        return l2_norm_on_domain(domain, self.dx1)


class BlockScaling(tuple):
    """Multipliers ``(s11, s12, s21, s22)`` applied blockwise during assembly."""

    __slots__ = ()

    def __new__(cls, s11, s12, s21, s22):
        return super().__new__(cls, (float(s11), float(s12), float(s21), float(s22)))

    @property
    def s11(self):
        return self[0]

    @property
    def s12(self):
        return self[1]

    @property
    def s21(self):
        return self[2]

    @property
    def s22(self):
        return self[3]


def scale_matrix(A: CoefficientField, epsilon: float) -> BlockScaling:
    """Blockwise multipliers of the perturbed matrix for a given epsilon."""
    if not (0.0 < epsilon <= 1.0):
        raise ValueError(f"epsilon must lie in (0,1], got {epsilon!r}")
    return BlockScaling(epsilon ** 2, epsilon, epsilon, 1.0)


# Formula provenance strings, keyed by ledger field name.  These are the
# exact expressions evaluated by compute_constants.
LEDGER_FORMULAS = {
    "poincare_omega1": "L1 / pi",
    "poincare_omega2": "L2 / pi",
    "poincare_domain": "(poincare_omega1^-2 + poincare_omega2^-2)^(-1/2)",
    "sup_a11": "sup |a11| (grid sampled)",
    "sup_a12": "sup |a12| (grid sampled)",
    "sup_a21": "sup |a21| (grid sampled)",
    "sup_a22": "sup |a22| (grid sampled)",
    "sup_matrix": "sup of the pointwise spectral norm of A (grid sampled)",
    "sup_da12_dx1": "sup |d(a12)/dx1| (grid sampled, declared partial)",
    "sup_da12_dx2": "sup |d(a12)/dx2| (grid sampled, declared partial)",
    "energy_const": "(sup_a21^2 + sup_a11^2) / (2 lam)",
    "offdiag_const": "(3 (poincare_omega2 sup_da12_dx2)^2 + 3 sup_a12^2) / lam",
    "offdiag_deriv_const": "3 (poincare_omega2 sup_da12_dx1)^2 / lam",
    "rate_const_grad": "sqrt(4 (energy_const + offdiag_const) / lam)",
    "rate_const_source": "2 sqrt(offdiag_deriv_const) poincare_omega2 / lam^(3/2)",
    "dq_const": "poincare_omega2^2 / lam",
    "dq_const_statement": "poincare_omega2 / lam",
    "cea_limit_linear": "sup_a22 / lam",
    "cea_perturbed_linear": "sup_matrix / lam (divide by eps^2 at use)",
    "cea_limit": "sqrt((2 M poincare_omega2 (area_sqrt + poincare_omega2^2 "
                 "norm_f / lam) + 2 sup_a22 poincare_omega2 norm_f / lam) / lam)",
    "cea_perturbed": "sqrt((2 M poincare_domain (area_sqrt + poincare_domain^2 "
                     "norm_f / lam) + 2 sup_matrix poincare_domain norm_f / lam) "
                     "/ lam) (divide by eps^2 at use)",
    "area_sqrt": "sqrt(L1 L2)",
    "norm_f": "||f|| (composite Gauss)",
    "growth_const": "M with |beta(s)| <= M (1 + |s|)",
}


@dataclass
class ConstantLedger:
    """Every explicit constant entering the bounds, in one deterministic place."""

    poincare_omega1: float
    poincare_omega2: float
    poincare_domain: float
    sup_a11: float
    sup_a12: float
    sup_a21: float
    sup_a22: float
    sup_matrix: float
    sup_da12_dx1: float
    sup_da12_dx2: float
    energy_const: float
    offdiag_const: float
    offdiag_deriv_const: float
    rate_const_grad: float
    rate_const_source: float
    dq_const: float
    dq_const_statement: float
    cea_limit_linear: float
    cea_perturbed_linear: float
    cea_limit: float
    cea_perturbed: float
    area_sqrt: float
    norm_f: float
    growth_const: float
    lam: float
    sample_grid: int = 512

    def as_dict(self):
        return {name: getattr(self, name) for name in LEDGER_FORMULAS}

    def validate(self):
        strict = ("poincare_omega1", "poincare_omega2", "poincare_domain",
                  "energy_const", "rate_const_grad", "dq_const",
                  "dq_const_statement", "cea_limit_linear",
                  "cea_perturbed_linear", "area_sqrt")
        for name in LEDGER_FORMULAS:
            v = getattr(self, name)
            if not np.isfinite(v):
                raise ValueError(f"ledger entry {name} is not finite")
            if v < 0:
                raise ValueError(f"ledger entry {name} is negative")
        for name in strict:
            if getattr(self, name) <= 0:
                raise ValueError(f"ledger entry {name} must be strictly positive")
        return True


def _sup_abs(field: ScalarField, X1, X2) -> float:
    return float(np.max(np.abs(field(X1, X2))))


def compute_constants(A: CoefficientField, domain: TensorDomain,
                      f: Optional[SourceField] = None,
                      reaction: Optional[ReactionSpec] = None,
                      grid: int = 512) -> ConstantLedger:
    """Evaluate the full ledger by literal transcription of the formulas.

    Sup-norms are estimated on a ``grid x grid`` sample (including the
    boundary).  Partials of a12 must be declared unless a12 is constant in
    the relevant variable.
    """
    lam = A.lam
    X1, X2 = _sample_grid(domain, grid)
    sup_a11 = _sup_abs(A.a11, X1, X2)
    sup_a12 = _sup_abs(A.a12, X1, X2)
    sup_a21 = _sup_abs(A.a21, X1, X2)
    sup_a22 = _sup_abs(A.a22, X1, X2)

    vals = [a(X1, X2) for a in A.entries()]
    # pointwise spectral norm of a 2x2 matrix via its singular values
    sq = vals[0] ** 2 + vals[1] ** 2 + vals[2] ** 2 + vals[3] ** 2
    det = vals[0] * vals[3] - vals[1] * vals[2]
    disc = np.sqrt(np.maximum(sq ** 2 - 4.0 * det ** 2, 0.0))
    sup_matrix = float(np.max(np.sqrt(np.maximum((sq + disc) / 2.0, 0.0))))

    def partial_sup(which: str) -> float:
        declared = getattr(A.a12, which)
        var = "x1" if which == "dx1" else "x2"
        if declared is not None:
            return _sup_abs(as_field(declared), X1, X2)
        if var not in A.a12.deps:
            return 0.0
        raise ValueError(
            f"a12 depends on {var} but no {which} partial was declared")

    sup_da12_dx1 = partial_sup("dx1")
    sup_da12_dx2 = partial_sup("dx2")

    c2 = domain.poincare_omega2
    energy_const = (sup_a21 ** 2 + sup_a11 ** 2) / (2.0 * lam)
    offdiag_const = (3.0 * (c2 * sup_da12_dx2) ** 2 + 3.0 * sup_a12 ** 2) / lam
    offdiag_deriv_const = 3.0 * (c2 * sup_da12_dx1) ** 2 / lam
    rate_const_grad = math.sqrt(4.0 * (energy_const + offdiag_const) / lam)
    rate_const_source = 2.0 * math.sqrt(offdiag_deriv_const) * c2 / lam ** 1.5
    dq_const = c2 ** 2 / lam
    dq_const_statement = c2 / lam

    area_sqrt = math.sqrt(domain.area)
    norm_f = f.norm_l2(domain) if f is not None else 0.0
    M = reaction.growth if reaction is not None and reaction.kind != "zero" else 0.0

    cd = domain.poincare_domain
    cea_limit_sq = (2.0 * M * c2 * (area_sqrt + c2 ** 2 * norm_f / lam)
                    + sup_a22 * 2.0 * c2 * norm_f / lam) / lam
    cea_pert_sq = (2.0 * M * cd * (area_sqrt + cd ** 2 * norm_f / lam)
                   + sup_matrix * 2.0 * cd * norm_f / lam) / lam

    ledger = ConstantLedger(
        poincare_omega1=domain.poincare_omega1,
        poincare_omega2=c2,
        poincare_domain=cd,
        sup_a11=sup_a11, sup_a12=sup_a12, sup_a21=sup_a21, sup_a22=sup_a22,
        sup_matrix=sup_matrix,
        sup_da12_dx1=sup_da12_dx1, sup_da12_dx2=sup_da12_dx2,
        energy_const=energy_const,
        offdiag_const=offdiag_const,
        offdiag_deriv_const=offdiag_deriv_const,
        rate_const_grad=rate_const_grad,
        rate_const_source=rate_const_source,
        dq_const=dq_const,
        dq_const_statement=dq_const_statement,
        cea_limit_linear=sup_a22 / lam,
        cea_perturbed_linear=sup_matrix / lam,
        cea_limit=math.sqrt(max(cea_limit_sq, 0.0)),
        cea_perturbed=math.sqrt(max(cea_pert_sq, 0.0)),
        area_sqrt=area_sqrt,
        norm_f=norm_f,
        growth_const=M,
        lam=lam,
        sample_grid=grid,
    )
    ledger.validate()
    return ledger
