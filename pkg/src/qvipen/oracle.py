"""Slow, simple ground-truth solvers used to cross-check the Newton path.

Two routes: explicit pseudo-time marching (works for any penalty degree), and
exhaustive active-set enumeration (exact, affine degree-1 instances at desk
scale only). Both accumulate their penalty terms with plain loops on purpose;
they must not share code with the production residual they are checking.
"""
from __future__ import annotations

import numpy as np

from .core import PenalizedProblem, RegimeField

__all__ = [
    "OracleError",
    "MaxStepsExceeded",
    "DivergenceDetected",
    "NoConsistentPattern",
    "MultiplePatterns",
    "pseudo_time_solve",
    "active_set_enumerate",
]


class OracleError(Exception):
    """Base class for oracle failures."""


class MaxStepsExceeded(OracleError):
    pass


class DivergenceDetected(OracleError):
    pass


class NoConsistentPattern(OracleError):
    pass


class MultiplePatterns(OracleError):
    def __init__(self, patterns):
        self.patterns = sorted(patterns)
        super().__init__(f"degenerate tie between penalty patterns {self.patterns}")


def _residual(prob: PenalizedProblem, u: np.ndarray) -> np.ndarray:
    g = np.array(prob.system.evaluate(u), dtype=float)
    d = u.shape[0]
    e = 1.0 / prob.penalty.sigma
    for i in range(d):
        for j in range(d):
            if j == i:
                continue
            arg = u[j] - prob.costs.costs[i, j] - u[i]
            g[i] -= prob.rho * np.maximum(arg, 0.0) ** e
    return g


def pseudo_time_solve(
    prob: PenalizedProblem,
    step: float | None = None,
    tol: float = 1e-8,
    max_steps: int = 10_000_000,
) -> RegimeField:
    """March u <- u - step * G(u) from zero until the residual sup-norm <= tol.

    The default step 0.9 / (max slant diagonal + rho*(d-1)) makes the update a
    contraction on the assembled systems. A non-finite residual, or one that
    grows for 100 steps in a row, halves the step and restarts the march from
    zero; ten halvings without recovery is a failure.
    """
    d, n = prob.system.d, prob.system.N
    u = np.zeros((d, n))
    if step is None:
        diag = float(np.max(np.abs(prob.system.slant_at(u).diagonal())))
        step = 0.9 / (diag + prob.rho * (d - 1))
    delta = float(step)
    halvings = 0
    growth = 0
    prev = np.inf
    # overflow on a divergent trajectory is an anticipated signal, not an error
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(max_steps):
            g = _residual(prob, u)
            res = float(np.max(np.abs(g)))
            if res <= tol:
                return RegimeField(u)
            if not np.isfinite(res):
                growth = 100
            elif res > prev:
                growth += 1
            else:
                growth = 0
            if growth >= 100:
                halvings += 1
                if halvings > 10:
                    raise DivergenceDetected(
                        f"residual still growing after {halvings - 1} step halvings"
                    )
                delta *= 0.5
                growth = 0
                prev = np.inf
                u = np.zeros((d, n))
                continue
            prev = res
            u = u - delta * g
    raise MaxStepsExceeded(f"residual {res:.3e} > {tol:.3e} after {max_steps} steps")


def active_set_enumerate(prob: PenalizedProblem) -> RegimeField:
    """Exact solve by trying every on/off pattern of the penalty terms.

    A pattern is accepted when the solution of its linear system reproduces the
    pattern's own signs (a term is on iff its argument is strictly positive).
    Exactly one pattern should survive; zero or several indicate an assembly
    bug or a degenerate tie.
    """
    system = prob.system
    if not system.is_affine:
        raise ValueError("enumeration requires an affine system")
    if prob.penalty.sigma != 1.0:
        raise ValueError(
            f"enumeration supports penalty degree 1 only, got sigma={prob.penalty.sigma}"
        )
    d, n = system.d, system.N
    pairs = [(i, j) for i in range(d) for j in range(d) if j != i]
    bits = len(pairs) * n
    if bits > 16:
        raise ValueError(f"instance has {bits} penalty terms, enumeration caps at 16")
    zero = np.zeros((d, n))
    a = np.asarray(system.slant_at(zero).todense())
    b = -system.evaluate(zero).ravel()
    c = prob.costs.costs
    rho = prob.rho
    hits = []
    for pattern in range(1 << bits):
        m = a.copy()
        rhs = b.copy()
        for t in range(bits):
            if not pattern >> t & 1:
                continue
            i, j = pairs[t // n]
            l = t % n
            m[i * n + l, i * n + l] += rho
            m[i * n + l, j * n + l] -= rho
            rhs[i * n + l] -= rho * c[i, j]
        try:
            u = np.linalg.solve(m, rhs)
        except np.linalg.LinAlgError:
            continue
        consistent = True
        for t in range(bits):
            i, j = pairs[t // n]
            l = t % n
            active = u[j * n + l] - c[i, j] - u[i * n + l] > 0.0
            if active != bool(pattern >> t & 1):
                consistent = False
                break
        if consistent:
            hits.append((pattern, u))
    if not hits:
        raise NoConsistentPattern("no penalty pattern reproduces its own signs")
    if len(hits) > 1:
        raise MultiplePatterns([p for p, _ in hits])
    return RegimeField(hits[0][1].reshape(d, n))
