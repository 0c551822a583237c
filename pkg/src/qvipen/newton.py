"""Semismooth Newton driver, sparse linear solve, and stopping criterion.

The iteration is plain undamped Newton on a piecewise-differentiable residual:
solve L[u_k] delta = -G(u_k), update, repeat. It stops once BOTH the relative
increment ||delta|| / max(||u||, scale) drops below tol AND the residual
sup-norm is at or below residual_tol; the increment rule alone can declare
victory on a stagnating iteration, and the residual check costs one evaluation
that is needed anyway. The iteration count is the number of updates performed,
including the final confirming one.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import (
    MonotoneSystem,
    PenalizedProblem,
    RegimeField,
    SolveReport,
    field_values,
    penalized_residual,
    penalized_slant,
    sup_norm,
)

__all__ = [
    "NewtonConfig",
    "ObstacleProblem",
    "SingularSlant",
    "MaxIterExceeded",
    "linear_solve",
    "solve_root",
    "solve_penalized",
    "solve_obstacle",
]


@dataclass(frozen=True)
class NewtonConfig:
    """Stopping parameters; the defaults are used for every shipped experiment."""

    tol: float = 1e-9
    scale: float = 1.0
    residual_tol: float = 1e-8
    max_iter: int = 100

    def __post_init__(self) -> None:
        if not (self.tol > 0 and self.scale > 0 and self.residual_tol > 0):
            raise ValueError("tol, scale, and residual_tol must be positive")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be at least 1, got {self.max_iter}")


@dataclass(frozen=True)
class ObstacleProblem:
    """min(F(v), v - psi) = 0 with a fixed per-regime obstacle psi.

    With ``pseudo_time = (epsilon, anchor)`` the constraint branch becomes
    v - psi + epsilon*(v - anchor), which pulls the solve toward the anchor
    and makes the enclosing sweep a contraction.
    """

    system: MonotoneSystem
    psi: np.ndarray
    pseudo_time: tuple | None = None

    def __post_init__(self) -> None:
        psi = field_values(self.psi, self.system.d, self.system.N)
        object.__setattr__(self, "psi", psi)
        if self.pseudo_time is not None:
            epsilon, anchor = self.pseudo_time
            if not (np.isfinite(epsilon) and epsilon >= 0):
                raise ValueError(f"epsilon must be nonnegative, got {epsilon}")
            anchor = field_values(anchor, self.system.d, self.system.N)
            object.__setattr__(self, "pseudo_time", (float(epsilon), anchor))


class SingularSlant(Exception):
    """Linear solve failed; carries the outer iterate when one exists."""

    def __init__(self, message, iterate=None, report=None):
        super().__init__(message)
        self.iterate = iterate
        self.report = report


class MaxIterExceeded(Exception):
    def __init__(self, message, iterate, report):
        super().__init__(message)
        self.iterate = iterate
        self.report = report


def linear_solve(op, rhs: np.ndarray) -> np.ndarray:
    """Sparse direct solve with one step of iterative refinement.

    The refinement step pushes the backward error to the roundoff floor, which
    the extreme penalty weights need. Rank deficiency surfaces as
    SingularSlant.
    """
    matrix = sp.csc_matrix(op)
    rhs = np.asarray(rhs, dtype=float)
    try:
        lu = spla.splu(matrix)
        x = lu.solve(rhs)
        x += lu.solve(rhs - matrix @ x)
    except RuntimeError as exc:  # raised by SuperLU on exact singularity
        raise SingularSlant(f"sparse factorization failed: {exc}") from exc
    if not np.all(np.isfinite(x)):
        raise SingularSlant("linear solve produced non-finite entries")
    return x


def _newton(residual_at, slant_at, initial, cfg: NewtonConfig):
    u = field_values(initial).copy()
    start = time.perf_counter()
    g = residual_at(u)
    increments: list = []
    residuals = [sup_norm(g)]
    iterations = 0
    converged = False
    for _ in range(cfg.max_iter):
        try:
            delta = linear_solve(slant_at(u), -g.ravel()).reshape(u.shape)
        except SingularSlant as exc:
            exc.iterate = RegimeField(u)
            exc.report = SolveReport(iterations, residuals[-1], increments,
                                     residuals, time.perf_counter() - start, False)
            raise
        u = u + delta
        iterations += 1
        g = residual_at(u)
        residuals.append(sup_norm(g))
        increments.append(sup_norm(delta) / max(sup_norm(u), cfg.scale))
        if increments[-1] < cfg.tol and residuals[-1] <= cfg.residual_tol:
            converged = True
            break
    report = SolveReport(iterations, residuals[-1], increments, residuals,
                         time.perf_counter() - start, converged)
    result = RegimeField(u)
    if not converged:
        raise MaxIterExceeded(
            f"no convergence in {cfg.max_iter} iterations "
            f"(residual {report.final_residual:.3e})",
            result,
            report,
        )
    return result, report


def solve_root(system: MonotoneSystem, initial, cfg: NewtonConfig | None = None):
    """Solve F(u) = 0; one exact step plus a confirming one when F is affine."""
    cfg = cfg or NewtonConfig()
    return _newton(system.evaluate, system.slant_at, initial, cfg)


def solve_penalized(prob: PenalizedProblem, initial, cfg: NewtonConfig | None = None):
    """Solve the penalized equation; degree-1 penalty only."""
    if prob.penalty.sigma != 1.0 and prob.rho != 0.0:
        raise ValueError(
            f"Newton path supports penalty degree 1 only, got sigma={prob.penalty.sigma}; "
            "other degrees go through the marching oracle"
        )
    cfg = cfg or NewtonConfig()
    return _newton(
        lambda u: penalized_residual(u, prob),
        lambda u: penalized_slant(u, prob),
        initial,
        cfg,
    )


def _obstacle_parts(prob: ObstacleProblem, u: np.ndarray):
    constraint = u - prob.psi
    epsilon = 0.0
    if prob.pseudo_time is not None:
        epsilon, anchor = prob.pseudo_time
        constraint = constraint + epsilon * (u - anchor)
    return constraint, epsilon


def _obstacle_residual(prob: ObstacleProblem, u: np.ndarray) -> np.ndarray:
    constraint, _ = _obstacle_parts(prob, u)
    return np.minimum(prob.system.evaluate(u), constraint)


def _obstacle_slant(prob: ObstacleProblem, u: np.ndarray) -> sp.csr_matrix:
    # row per component: the F-row where F is the smaller branch (ties go to
    # F, treating the constraint as inactive at equality), else (1+eps) * identity
    constraint, epsilon = _obstacle_parts(prob, u)
    f_rows = (prob.system.evaluate(u) <= constraint).ravel()
    base = prob.system.slant_at(u).tocsr()
    keep = sp.diags(f_rows.astype(float))
    ident = sp.diags(np.where(f_rows, 0.0, 1.0 + epsilon))
    return (keep @ base + ident).tocsr()


def solve_obstacle(prob: ObstacleProblem, initial, cfg: NewtonConfig | None = None):
    """Solve min(F(v), v - psi [+ eps*(v - anchor)]) = 0 for fixed psi."""
    cfg = cfg or NewtonConfig()
    return _newton(
        lambda u: _obstacle_residual(prob, u),
        lambda u: _obstacle_slant(prob, u),
        initial,
        cfg,
    )
