"""Sparse symmetric positive-definite solves: CG with optional Jacobi
preconditioning, a dense Cholesky fallback, and an automatic LU route for
matrices that fail the symmetry check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "SolverConfig",
    "SolveResult",
    "NonConvergenceError",
    "IndefiniteOperatorError",
    "solve",
]

DENSE_LIMIT = 4000


@dataclass(frozen=True)
class SolverConfig:
    method: str = "cg"  # "cg" | "dense"
    preconditioner: str = "jacobi"  # "none" | "jacobi"
    rel_tol: float = 1e-10
    max_iter: Optional[int] = None  # default 20 * n

    def __post_init__(self):
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.method not in ("cg", "dense"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.preconditioner not in ("none", "jacobi"):
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")


class SolveResult(NamedTuple):
    x: np.ndarray
    residual_norm: float
    iterations: int


class NonConvergenceError(RuntimeError):
    """Iteration cap reached; carries the best iterate seen."""

    def __init__(self, best_x, residual_norm, iterations, hint=""):
        message = (f"solver did not converge in {iterations} iterations "
                   f"(best residual {residual_norm:.3e})")
        if hint:
            message += f"; {hint}"
        super().__init__(message)
        self.best_x = best_x
        self.residual_norm = residual_norm
        self.iterations = iterations


class IndefiniteOperatorError(RuntimeError):
    """CG detected a nonpositive curvature direction (matrix not SPD)."""

    def __init__(self):
        super().__init__("CG breakdown: operator is not positive definite; "
                         "retry with SolverConfig(method='dense')")


def _is_symmetric(K, tol=1e-12):
    d = K - K.T
    scale = max(abs(K).max() if sp.issparse(K) else np.max(np.abs(K)), 1e-300)
    gap = abs(d).max() if sp.issparse(d) else np.max(np.abs(d))
    return gap <= tol * scale


def _cg(K, b, x0, rel_tol, max_iter, precond, callback):
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - K @ x
    norm_b = np.linalg.norm(b)
    target = rel_tol * norm_b
    best_x, best_res = x.copy(), np.linalg.norm(r)
    if best_res <= target:
        return SolveResult(x, best_res, 0)
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Kp = K @ p
        curvature = p @ Kp
        if curvature <= 0.0:
            raise IndefiniteOperatorError()
        alpha = rz / curvature
        x = x + alpha * p
        r = r - alpha * Kp
        res = np.linalg.norm(r)
        if callback is not None:
            callback(x.copy())
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= target:
            return SolveResult(x, res, it)
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonConvergenceError(best_x, best_res, max_iter)


def solve(K, rhs, cfg: Optional[SolverConfig] = None, x0=None,
          callback: Optional[Callable] = None) -> SolveResult:
    """Solve ``K x = rhs``; deterministic given the configuration.

    Returns the solution, the true residual norm, and the iteration count
    (0 for direct methods).  Nonsymmetric inputs are routed to sparse LU.
    """
    cfg = cfg or SolverConfig()
    b = np.asarray(rhs, dtype=float)
    n = b.shape[0]
    if K.shape != (n, n):
        raise ValueError(f"matrix shape {K.shape} does not match rhs length {n}")
    if not np.linalg.norm(b):
        return SolveResult(np.zeros(n), 0.0, 0)

    Ks = sp.csr_matrix(K) if not sp.issparse(K) else K.tocsr()
    if not _is_symmetric(Ks):
        lu = spla.splu(Ks.tocsc())
        x = lu.solve(b)
        return SolveResult(x, float(np.linalg.norm(b - Ks @ x)), 0)

    if cfg.method == "dense":
        if n > DENSE_LIMIT:
            raise ValueError(f"dense Cholesky limited to n <= {DENSE_LIMIT}, got {n}")
        dense = Ks.toarray()
        c, low = scipy.linalg.cho_factor(dense)
        x = scipy.linalg.cho_solve((c, low), b)
        return SolveResult(x, float(np.linalg.norm(b - dense @ x)), 0)

    max_iter = cfg.max_iter if cfg.max_iter is not None else 20 * n
    if cfg.preconditioner == "jacobi":
        diag = Ks.diagonal()
        if np.any(diag <= 0):
            raise IndefiniteOperatorError()
        inv = 1.0 / diag

        def precond(r):
            return inv * r
    else:
        def precond(r):
            return r

    return _cg(Ks, b, x0, cfg.rel_tol, max_iter, precond, callback)
