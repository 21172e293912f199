"""Tensor-product domains, nested 1D basis families, and Galerkin spaces.

Two conforming families on an interval are provided, both vanishing at the
interval endpoints:

* ``Q1Basis`` - piecewise linear hat functions on a uniform mesh with ``m``
  subintervals (``m - 1`` interior nodes).  Refining ``m`` by an integer
  factor gives a nested family.
* ``SineBasis`` - the first ``m`` eigenfunctions of the second derivative,
  normalized to unit L2 norm, so the 1D mass matrix is the identity.  Any
  ``m' >= m`` gives a nested family.

A :class:`GalerkinSpace` is the tensor product of two families with the flat
index convention ``flat = i * dim2 + j`` (second direction fastest), which
makes Kronecker-structured matrices index-transparent.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "TensorDomain",
    "BasisFamily1D",
    "Q1Basis",
    "SineBasis",
    "GalerkinSpace",
    "Quadrature",
    "build_space",
    "eval_basis",
    "embedding_matrix",
    "gauss_rule",
]

# Panels per mode for the sine family: calibrated so that composite
# Gauss-Legendre of order 4 integrates every product of two modes to
# better than 1e-13 relative accuracy.
SINE_PANELS_PER_MODE = 24


def gauss_rule(order: int):
    """Gauss-Legendre points and weights on the reference cell [0, 1].

    Exact for polynomials of degree <= 2*order - 1.
    """
    if order < 1:
        raise ValueError("quadrature order must be >= 1")
    x, w = np.polynomial.legendre.leggauss(order)
    return 0.5 * (x + 1.0), 0.5 * w


@dataclass(frozen=True)
class Quadrature:
    """Composite Gauss-Legendre rule description.

    ``order`` counts points per cell; the cell partition is chosen by the
    basis family (mesh elements for Q1, uniform panels for sine).
    """

    order: int = 4

    def __post_init__(self):
        if self.order < 1:
            raise ValueError("quadrature order must be >= 1")


@dataclass(frozen=True)
class TensorDomain:
    """Rectangle ``omega1 x omega2`` given by two nondegenerate intervals."""

    omega1: tuple[float, float]
    omega2: tuple[float, float]

    def __post_init__(self):
        a1, b1 = self.omega1
        a2, b2 = self.omega2
        if not (b1 > a1 and b2 > a2):
            raise ValueError("degenerate interval: each side must have b > a")

    @property
    def length1(self) -> float:
        return self.omega1[1] - self.omega1[0]

    @property
    def length2(self) -> float:
        return self.omega2[1] - self.omega2[0]

    @property
    def area(self) -> float:
        return self.length1 * self.length2

    # Best interval constants ||v|| <= C ||v'|| for functions vanishing at
    # the endpoints; the rectangle constant follows from the first
    # eigenvalue of the Laplacian on the product.
    @property
    def poincare_omega1(self) -> float:
        return self.length1 / math.pi

    @property
    def poincare_omega2(self) -> float:
        return self.length2 / math.pi

    @property
    def poincare_domain(self) -> float:
        return (self.poincare_omega1 ** -2 + self.poincare_omega2 ** -2) ** -0.5


class BasisFamily1D:
    """Base class for a 1D basis on an interval, conforming to zero traces."""

    kind: str
    interval: tuple[float, float]
    dim: int

    @property
    def length(self) -> float:
        return self.interval[1] - self.interval[0]

    def eval_table(self, points):
        """Values and first derivatives of all basis functions.

        Returns ``(V, D)`` with shape ``(len(points), dim)``.
        """
        raise NotImplementedError

    def quad_points(self, order: int):
        """Composite Gauss rule ``(points, weights)`` over the interval."""
        raise NotImplementedError

    def is_nested_in(self, fine: "BasisFamily1D") -> bool:
        raise NotImplementedError

    def embedding_into(self, fine: "BasisFamily1D"):
        """Matrix ``E`` of shape ``(fine.dim, dim)`` with ``phi_k = sum_l E[l,k] psi_l``."""
        raise NotImplementedError


class Q1Basis(BasisFamily1D):
    """Interior hat functions on a uniform mesh with ``m`` subintervals."""

    kind = "q1"

    def __init__(self, interval, m: int):
        a, b = interval
        if not b > a:
            raise ValueError("degenerate interval")
        if m < 2:
            raise ValueError("q1 family needs at least 2 subintervals")
        self.interval = (float(a), float(b))
        self.m = int(m)
        self.dim = self.m - 1
        self.h = self.length / self.m

    def __repr__(self):
        return f"Q1Basis({self.interval}, m={self.m})"

    def _locate(self, x):
        a, _ = self.interval
        e = np.floor((np.asarray(x, dtype=float) - a) / self.h).astype(int)
        e = np.clip(e, 0, self.m - 1)
        xi = (np.asarray(x, dtype=float) - a) / self.h - e
        return e, xi

    def eval_table(self, points):
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        e, xi = self._locate(pts)
        V = np.zeros((pts.size, self.dim))
        D = np.zeros((pts.size, self.dim))
        rows = np.arange(pts.size)
        # node e carries 1 - xi on element e, node e + 1 carries xi
        left = e - 1  # interior dof of node e
        ok = left >= 0
        V[rows[ok], left[ok]] = 1.0 - xi[ok]
        D[rows[ok], left[ok]] = -1.0 / self.h
        right = e  # interior dof of node e + 1
        ok = right <= self.dim - 1
        V[rows[ok], right[ok]] = xi[ok]
        D[rows[ok], right[ok]] = 1.0 / self.h
        return V, D

    def quad_points(self, order: int):
        xg, wg = gauss_rule(order)
        a, _ = self.interval
        offsets = a + self.h * np.arange(self.m)
        pts = (offsets[:, None] + self.h * xg[None, :]).ravel()
        wts = np.tile(self.h * wg, self.m)
        return pts, wts

    def nodes(self):
        a, _ = self.interval
        return a + self.h * np.arange(1, self.m)

    def is_nested_in(self, fine) -> bool:
        return (
            isinstance(fine, Q1Basis)
            and fine.interval == self.interval
            and fine.m % self.m == 0
        )

    def embedding_into(self, fine):
        if not self.is_nested_in(fine):
            raise ValueError(f"{self!r} is not nested in {fine!r}")
        # piecewise linear functions are determined by their nodal values
        V, _ = self.eval_table(fine.nodes())
        return V


class SineBasis(BasisFamily1D):
    """First ``m`` sine modes on the interval, orthonormal in L2."""

    kind = "sine"

    def __init__(self, interval, m: int):
        a, b = interval
        if not b > a:
            raise ValueError("degenerate interval")
        if m < 1:
            raise ValueError("sine family needs at least 1 mode")
        self.interval = (float(a), float(b))
        self.m = int(m)
        self.dim = self.m

    def __repr__(self):
        return f"SineBasis({self.interval}, m={self.m})"

    def frequencies(self):
        """Angular frequencies ``k*pi/L``; squares are the stiffness eigenvalues."""
        L = self.length
        return np.arange(1, self.m + 1) * math.pi / L

    def eval_table(self, points):
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        a, _ = self.interval
        L = self.length
        scale = math.sqrt(2.0 / L)
        omega = self.frequencies()
        phase = (pts[:, None] - a) * omega[None, :]
        V = scale * np.sin(phase)
        D = scale * omega[None, :] * np.cos(phase)
        return V, D

    def quad_points(self, order: int):
        panels = SINE_PANELS_PER_MODE * self.m
        xg, wg = gauss_rule(order)
        a, _ = self.interval
        h = self.length / panels
        offsets = a + h * np.arange(panels)
        pts = (offsets[:, None] + h * xg[None, :]).ravel()
        wts = np.tile(h * wg, panels)
        return pts, wts

    def is_nested_in(self, fine) -> bool:
        return (
            isinstance(fine, SineBasis)
            and fine.interval == self.interval
            and self.m <= fine.m
        )

    def embedding_into(self, fine):
        if not self.is_nested_in(fine):
            raise ValueError(f"{self!r} is not nested in {fine!r}")
        E = np.zeros((fine.dim, self.dim))
        E[: self.dim, : self.dim] = np.eye(self.dim)
        return E


_FAMILIES = {"q1": Q1Basis, "sine": SineBasis}


class GalerkinSpace:
    """Tensor product of two 1D families with j-major flat indexing."""

    def __init__(self, domain: TensorDomain, basis1: BasisFamily1D,
                 basis2: BasisFamily1D, quadrature: Quadrature = Quadrature()):
        if basis1.interval != domain.omega1 or basis2.interval != domain.omega2:
            raise ValueError("basis intervals must match the domain sides")
        self.domain = domain
        self.basis1 = basis1
        self.basis2 = basis2
        self.quadrature = quadrature
        self.dim = basis1.dim * basis2.dim

    def __repr__(self):
        return (f"GalerkinSpace({self.basis1!r} x {self.basis2!r}, "
                f"dim={self.dim})")

    def flat_index(self, i: int, j: int) -> int:
        if not (0 <= i < self.basis1.dim and 0 <= j < self.basis2.dim):
            raise IndexError(f"basis pair ({i}, {j}) out of range")
        return i * self.basis2.dim + j

    def unflatten(self, flat: int) -> tuple[int, int]:
        if not (0 <= flat < self.dim):
            raise IndexError(f"flat index {flat} out of range for dim {self.dim}")
        return divmod(flat, self.basis2.dim)

    @cached_property
    def _quad1(self):
        return self.basis1.quad_points(self.quadrature.order)

    @cached_property
    def _quad2(self):
        return self.basis2.quad_points(self.quadrature.order)

    @cached_property
    def _tables1(self):
        return self.basis1.eval_table(self._quad1[0])

    @cached_property
    def _tables2(self):
        return self.basis2.eval_table(self._quad2[0])

    def eval_basis(self, flat: int, x1: float, x2: float):
        """Value and both partial derivatives of one basis function."""
        a1, b1 = self.domain.omega1
        a2, b2 = self.domain.omega2
        if not (a1 <= x1 <= b1 and a2 <= x2 <= b2):
            raise ValueError(f"point ({x1}, {x2}) lies outside the closed domain")
        i, j = self.unflatten(flat)
        V1, D1 = self.basis1.eval_table([x1])
        V2, D2 = self.basis2.eval_table([x2])
        value = V1[0, i] * V2[0, j]
        return value, D1[0, i] * V2[0, j], V1[0, i] * D2[0, j]

    def evaluate(self, coeffs, x1, x2):
        """Evaluate the function with given coefficients on a tensor grid."""
        c = np.asarray(coeffs, dtype=float).reshape(self.basis1.dim, self.basis2.dim)
        V1, _ = self.basis1.eval_table(np.atleast_1d(x1))
        V2, _ = self.basis2.eval_table(np.atleast_1d(x2))
        return V1 @ c @ V2.T

    def refine(self, factor: int = 2) -> "GalerkinSpace":
        """A strictly finer space of the same kinds (nested)."""
        b1 = _FAMILIES[self.basis1.kind](self.domain.omega1, self.basis1.m * factor)
        b2 = _FAMILIES[self.basis2.kind](self.domain.omega2, self.basis2.m * factor)
        return GalerkinSpace(self.domain, b1, b2, self.quadrature)


def build_space(domain: TensorDomain, kind1: str, m1: int, kind2: str, m2: int,
                quad_order: int = 4) -> GalerkinSpace:
    """Construct a tensor Galerkin space from family kinds and sizes."""
    if m1 < 1 or m2 < 1:
        raise ValueError("family sizes must be positive")
    kinds = {}
    for name, kind, m in (("first", kind1, m1), ("second", kind2, m2)):
        key = str(kind).lower()
        if key not in _FAMILIES:
            raise ValueError(f"unknown basis kind {kind!r} for {name} direction")
        kinds[name] = (key, int(m))
    k1, mm1 = kinds["first"]
    k2, mm2 = kinds["second"]
    basis1 = _FAMILIES[k1](domain.omega1, mm1)
    basis2 = _FAMILIES[k2](domain.omega2, mm2)
    return GalerkinSpace(domain, basis1, basis2, Quadrature(quad_order))


def eval_basis(space: GalerkinSpace, flat_index: int, point):
    """Module-level convenience wrapper around :meth:`GalerkinSpace.eval_basis`."""
    x1, x2 = point
    return space.eval_basis(flat_index, x1, x2)


def embedding_matrix(coarse: GalerkinSpace, fine: GalerkinSpace):
    """Dense matrix mapping coarse coefficients to fine coefficients.

    Requires both directions to be nested; the result ``E`` satisfies
    ``u_coarse(x) == (E @ c)`` interpreted in the fine space.
    """
    if coarse.domain != fine.domain:
        raise ValueError("spaces live on different domains")
    E1 = coarse.basis1.embedding_into(fine.basis1)
    E2 = coarse.basis2.embedding_into(fine.basis2)
    return np.kron(E1, E2)
