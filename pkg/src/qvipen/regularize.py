"""Regularization sweeps, error-bound constants, and the zero-cost limit.

Two outer iterations approximate the switching solution through sequences of
simpler solves: the iterated-stopping sweep Q freezes the obstacle at the
previous iterate, and the time-marching sweep T keeps the obstacle live but
adds a pseudo-time pull toward the previous iterate. Their penalized
counterparts Q_rho and T_rho freeze the first slot of the penalty argument
instead. All four converge monotonically from below when started at the root
of F, which is what makes the error formulas in this module one-sided.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .core import (
    MonotoneSystem,
    PenalizedProblem,
    RegimeField,
    ShiftedSystem,
    SolveReport,
    SwitchingCostMatrix,
    _obstacles,
    as_costs,
    field_values,
    intervention,
    qvi_residual,
    sup_norm,
)
from .newton import NewtonConfig, ObstacleProblem, _newton, solve_obstacle, solve_penalized, solve_root

__all__ = [
    "ErrorConstants",
    "NonMonotoneSweep",
    "GapBoundViolation",
    "HjbResult",
    "estimate_C",
    "strict_supersolution",
    "apply_Q",
    "apply_T",
    "apply_Q_rho",
    "apply_T_rho",
    "iterate_to_fixed_point",
    "phi_minimize",
    "phi_upper_bound",
    "penalty_error_bound",
    "hjb_limit_solve",
    "zero_cost_gap_bound",
]


class NonMonotoneSweep(UserWarning):
    """A sweep decreased some component; from the root of F that is a bug."""


class GapBoundViolation(Exception):
    """A proven gap inequality failed numerically; carries the worst location."""

    def __init__(self, message, regime, node):
        super().__init__(message)
        self.regime = regime
        self.node = node


def estimate_C(system: MonotoneSystem, samples: int = 1000, rng=None) -> float:
    """Supremum of ||F(u)|| over the a-priori ball ||u|| <= ||F(0)||/gamma.

    Exact for affine systems (rowwise corner evaluation); otherwise estimated
    from random interior points plus random corners, inflated by 1.1.
    """
    radius = system.norm_F0 / system.gamma
    if system.is_affine:
        zero = np.zeros((system.d, system.N))
        matrix = sp.csr_matrix(system.slant_at(zero))
        b = -system.evaluate(zero).ravel()
        row_mass = np.asarray(np.abs(matrix).sum(axis=1)).ravel()
        return float(np.max(row_mass * radius + np.abs(b)))
    rng = rng or np.random.default_rng(0)
    best = system.norm_F0
    for k in range(samples):
        if k % 2:
            u = rng.uniform(-radius, radius, (system.d, system.N))
        else:
            u = radius * rng.choice([-1.0, 1.0], (system.d, system.N))
        best = max(best, sup_norm(system.evaluate(u)))
    return 1.1 * best


@dataclass(frozen=True)
class ErrorConstants:
    """The constants feeding every error formula: kappa, L_kappa, mu, and C.

    mode picks the contraction factor: "iterated-stopping" gives
    mu = min(1, gamma*kappa / (2||F(0)|| + kappa)); "time-marching" gives
    mu = kappa / (kappa + epsilon*L_kappa) and requires epsilon.
    """

    kappa: float
    L_kappa: float
    mu: float
    C: float
    mode: str
    epsilon: float | None
    norm_F0: float
    gamma: float
    min_cost: float

    @classmethod
    def for_system(
        cls,
        system: MonotoneSystem,
        costs,
        kappa: float | None = None,
        mode: str = "iterated-stopping",
        epsilon: float | None = None,
        rng=None,
    ) -> "ErrorConstants":
        costs = as_costs(costs, system.d)
        if kappa is None:
            kappa = costs.min_cost / 2.0  # any value in (0, c) works; take the midpoint
        if not 0.0 < kappa < costs.min_cost:
            raise ValueError(f"kappa must lie in (0, {costs.min_cost}), got {kappa}")
        f0 = system.norm_F0
        l_kappa = (2.0 * f0 + kappa) / system.gamma
        if mode == "iterated-stopping":
            mu = min(1.0, system.gamma * kappa / (2.0 * f0 + kappa))
        elif mode == "time-marching":
            if epsilon is None or epsilon <= 0:
                raise ValueError("time-marching mode needs epsilon > 0")
            mu = kappa / (kappa + epsilon * l_kappa)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        return cls(
            kappa=float(kappa),
            L_kappa=l_kappa,
            mu=mu,
            C=estimate_C(system, rng=rng),
            mode=mode,
            epsilon=epsilon,
            norm_F0=f0,
            gamma=system.gamma,
            min_cost=costs.min_cost,
        )


def strict_supersolution(
    system: MonotoneSystem,
    costs,
    kappa: float,
    rho: float = 1e6,
    cfg: NewtonConfig | None = None,
) -> RegimeField:
    """A field w with min(F_i(w), w^i - M_i w) = kappa in every component.

    Solved as the original problem with F shifted down by kappa and every
    cost reduced by kappa, through the penalty path at a large weight. The
    residual is validated and the weight retried tenfold once if needed.
    """
    costs = as_costs(costs, system.d)
    if not 0.0 < kappa < costs.min_cost:
        raise ValueError(f"kappa must lie in (0, {costs.min_cost}), got {kappa}")
    shifted = ShiftedSystem(system, kappa)
    reduced = SwitchingCostMatrix(costs.costs - kappa)
    root, _ = solve_root(shifted, np.zeros((system.d, system.N)), cfg)
    w = None
    for weight in (rho, 10.0 * rho):
        prob = PenalizedProblem(shifted, reduced, weight)
        w, _ = solve_penalized(prob, root, cfg)
        defect = sup_norm(qvi_residual(w, system, costs) - kappa)
        if defect <= 10.0 * kappa * 1e-3:
            return w
    raise ValueError(
        f"supersolution residual defect {defect:.3e} exceeds tolerance "
        f"{10.0 * kappa * 1e-3:.3e} even at weight {10.0 * rho:.1e}"
    )


def apply_Q(u, system: MonotoneSystem, costs, cfg: NewtonConfig | None = None) -> RegimeField:
    """One iterated-stopping sweep: solve with the obstacle frozen at M_i u."""
    v = field_values(u, system.d, system.N)
    costs = as_costs(costs, system.d)
    psi = _obstacles(v, costs)
    out, _ = solve_obstacle(ObstacleProblem(system, psi), v, cfg)
    return out


def apply_T(u, system: MonotoneSystem, costs, epsilon: float,
            cfg: NewtonConfig | None = None) -> RegimeField:
    """One time-marching sweep: the obstacle stays live, the epsilon term
    anchors the solve to the previous iterate."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    anchor = field_values(u, system.d, system.N)
    costs = as_costs(costs, system.d)
    d, n = anchor.shape

    def residual(v):
        constraint = v - _obstacles(v, costs) + epsilon * (v - anchor)
        return np.minimum(system.evaluate(v), constraint)

    def slant(v):
        constraint = v - _obstacles(v, costs) + epsilon * (v - anchor)
        f_rows = (system.evaluate(v) <= constraint).ravel()
        base = sp.diags(f_rows.astype(float)) @ system.slant_at(v).tocsr()
        rows, cols, vals = [], [], []
        for i in range(d):
            _, argmax = intervention(v, costs, i)
            take = ~f_rows[i * n:(i + 1) * n]
            idx = np.nonzero(take)[0]
            rows.append(i * n + idx)
            cols.append(i * n + idx)
            vals.append(np.full(idx.size, 1.0 + epsilon))
            rows.append(i * n + idx)
            cols.append(argmax[idx] * n + idx)
            vals.append(np.full(idx.size, -1.0))
        extra = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=base.shape,
        )
        return (base + extra).tocsr()

    out, _ = _newton(residual, slant, anchor, cfg or NewtonConfig())
    return out


def _frozen_penalty_solve(prob: PenalizedProblem, frozen: np.ndarray, epsilon: float,
                          cfg: NewtonConfig | None) -> RegimeField:
    system = prob.system
    if prob.rho == 0.0:
        out, _ = solve_root(system, frozen, cfg)
        return out
    if prob.penalty.sigma != 1.0:
        raise ValueError(
            f"Newton path supports penalty degree 1 only, got sigma={prob.penalty.sigma}"
        )
    d, n = system.d, system.N
    c = prob.costs.costs

    def args_at(v):
        base = frozen[None, :, :] - c[:, :, None] - v[:, None, :]
        if epsilon:
            base = base - epsilon * (v - frozen)[:, None, :]
        base[np.arange(d), np.arange(d), :] = -np.inf
        return base

    def residual(v):
        return system.evaluate(v) - prob.rho * prob.penalty(args_at(v)).sum(axis=1)

    def slant(v):
        # each active term depends on v only through -(1+epsilon) * v^i, so
        # the penalty part of the slant is purely diagonal
        count = (args_at(v) > 0.0).sum(axis=1).ravel()
        return (system.slant_at(v).tocsr()
                + sp.diags(prob.rho * (1.0 + epsilon) * count.astype(float)))

    out, _ = _newton(residual, slant, frozen, cfg or NewtonConfig())
    return out


def apply_Q_rho(u, prob: PenalizedProblem, cfg: NewtonConfig | None = None) -> RegimeField:
    """One penalized sweep: penalty arguments read their first slot from u."""
    frozen = field_values(u, prob.system.d, prob.system.N)
    return _frozen_penalty_solve(prob, frozen, 0.0, cfg)


def apply_T_rho(u, prob: PenalizedProblem, epsilon: float,
                cfg: NewtonConfig | None = None) -> RegimeField:
    """The time-marching variant of the penalized sweep: the penalty argument
    picks up an extra -epsilon*(v - u) pull toward the previous iterate."""
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    frozen = field_values(u, prob.system.d, prob.system.N)
    return _frozen_penalty_solve(prob, frozen, float(epsilon), cfg)


def iterate_to_fixed_point(step, start, max_sweeps: int = 200, tol: float = 1e-10):
    """Apply a sweep operator until the sup-norm increment drops below tol.

    Returns (final field, sweep count, increment history). A componentwise
    decrease beyond 1e-8 raises the NonMonotoneSweep warning: legitimate when
    the start is arbitrary, a solver bug when the start is the root of F.
    """
    u = field_values(start).copy()
    increments: list = []
    for sweep in range(1, max_sweeps + 1):
        nxt = field_values(step(u))
        diff = nxt - u
        drop = float(diff.min())
        if drop < -1e-8:
            warnings.warn(
                f"sweep {sweep} decreased a component by {drop:.3e}",
                NonMonotoneSweep,
                stacklevel=2,
            )
        increments.append(sup_norm(diff))
        u = nxt
        if increments[-1] < tol:
            break
    return RegimeField(u), len(increments), increments


def phi_minimize(nu: float, a: float, b: float):
    """Exact integer minimizer of phi(n) = nu*a**n + b*n over n >= 0.

    Returns (n_star, minimum). The continuous minimizer sits where
    a**x = -b/(nu*ln a); scanning up to its ceiling plus one is exhaustive
    because phi is convex. The result is checked against the closed-form
    upper bound before returning.
    """
    if not (0.0 < a < 1.0):
        raise ValueError(f"decay base must lie in (0, 1), got {a}")
    if not (b > 0.0 and nu > 0.0):
        raise ValueError(f"nu and b must be positive, got nu={nu}, b={b}")
    log_a = math.log(a)
    ratio = -b / (nu * log_a)
    if ratio >= 1.0:
        top = 1
    else:
        top = math.ceil(math.log(ratio) / log_a) + 1
    values = [nu * a**n + b * n for n in range(top + 1)]
    n_star = int(np.argmin(values))
    m = values[n_star]
    assert m <= phi_upper_bound(nu, a, b) * (1.0 + 1e-12) + 1e-300
    return n_star, m


def phi_upper_bound(nu: float, a: float, b: float) -> float:
    """Closed-form bound on min phi: nu on the flat branch, else phi at one
    past the continuous minimizer (the log argument is -b/(nu*ln a); the sign
    inside the log matters because ln a < 0)."""
    log_a = math.log(a)
    ratio = -b / (nu * log_a)
    if ratio >= 1.0:
        return nu
    return -a * b / log_a + b * (math.log(ratio) / log_a + 1.0)


def penalty_error_bound(constants: ErrorConstants, rho: float,
                        sigma: float = 1.0, tau: float = 1.0) -> float:
    """Rigorous upper bound on ||u - u^rho||, zero when costs are so large
    that the obstacle never binds."""
    if rho <= 0.0:
        raise ValueError(f"penalty weight must be positive, got {rho}")
    if constants.min_cost > 2.0 * constants.norm_F0 / constants.gamma:
        return 0.0
    per_sweep = (constants.C / (tau * rho)) ** sigma
    if constants.mu >= 1.0:
        return min(constants.L_kappa, per_sweep)
    _, m = phi_minimize(constants.L_kappa / constants.mu, 1.0 - constants.mu, per_sweep)
    return m


@dataclass
class HjbResult:
    """Zero-cost solve along a penalty schedule.

    values is the regime-wise maximum of the final solve (the solutions
    approach the common limit from below, so the max is the tightest
    estimate); stages holds (rho, solution, report) triples; regime_gaps the
    corresponding max pairwise regime differences; gap_bound the theoretical
    cap C/(tau*rho_final) on the final gap.
    """

    values: np.ndarray
    report: SolveReport
    stages: list
    regime_gaps: list
    gap_bound: float


def hjb_limit_solve(system: MonotoneSystem, rho_schedule,
                    cfg: NewtonConfig | None = None) -> HjbResult:
    """Solve the zero-switching-cost problem by driving the penalty weight up.

    All regimes collapse onto one value vector in the limit; each schedule
    entry is solved from the root of F so the reports match standalone runs.
    """
    schedule = [float(r) for r in rho_schedule]
    if not schedule or any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("rho schedule must be nonempty and strictly increasing")
    if any(r <= 0 for r in schedule):
        raise ValueError("rho schedule entries must be positive")
    costs = SwitchingCostMatrix.uniform(system.d, 0.0)
    root, _ = solve_root(system, np.zeros((system.d, system.N)), cfg)
    root = field_values(root)
    stages = []
    gaps = []
    for rho in schedule:
        u, report = solve_penalized(PenalizedProblem(system, costs, rho), root, cfg)
        v = field_values(u)
        stages.append((rho, v, report))
        gaps.append(float(np.max(v.max(axis=0) - v.min(axis=0))))
    final = stages[-1][1]
    bound = estimate_C(system) / schedule[-1]
    return HjbResult(final.max(axis=0), stages[-1][2], stages, gaps, bound)


def zero_cost_gap_bound(u_c_rho, u_rho, c: float, rho: float,
                        d: int, gamma: float) -> float:
    """Check 0 <= u_rho - u_c_rho <= (d-1)*c*rho/gamma and return the max gap.

    u_rho solves the zero-cost penalized problem, u_c_rho the positive-cost
    one at the same weight; the inequality is componentwise with a 1e-8
    allowance, and a violation reports its worst location.
    """
    a = field_values(u_c_rho)
    b = field_values(u_rho)
    gap = b - a
    bound = (d - 1) * c * rho / gamma
    low = float(gap.min())
    if low < -1e-8:
        i, l = divmod(int(np.argmin(gap)), gap.shape[1])
        raise GapBoundViolation(
            f"zero-cost solution dips {-low:.3e} below the costly one at "
            f"regime {i}, node {l}", i, l,
        )
    high = float(gap.max())
    if high > bound + 1e-8:
        i, l = divmod(int(np.argmax(gap)), gap.shape[1])
        raise GapBoundViolation(
            f"gap {high:.3e} exceeds bound {bound:.3e} at regime {i}, node {l}",
            i, l,
        )
    return high
