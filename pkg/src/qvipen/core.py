"""Core types and residual algebra for switching systems with interconnected obstacles.

A field stacks one value vector per regime, shape (d, N). Regimes couple only
through the intervention operator M_i u = max_{j != i} (u^j - c[i, j]) and, in
the penalized form, through the penalty terms rho * pi(u^j - c[i, j] - u^i).

Operations accept either a :class:`RegimeField` or any (d, N) array and return
plain numpy arrays; the wrapper class exists to validate data crossing an API
boundary.
"""
from __future__ import annotations

import abc
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

__all__ = [
    "RegimeField",
    "SwitchingCostMatrix",
    "PenaltyFunction",
    "MonotoneSystem",
    "AffineSystem",
    "ShiftedSystem",
    "PenalizedProblem",
    "SolveReport",
    "sup_norm",
    "a_priori_bound",
    "intervention",
    "qvi_residual",
    "penalized_residual",
    "penalized_slant",
    "field_values",
    "as_costs",
]


def sup_norm(x) -> float:
    """Largest absolute entry of ``x``."""
    a = np.asarray(x, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


@dataclass(frozen=True)
class RegimeField:
    """A d-regime field on an N-node grid, one row of values per regime."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise ValueError(f"expected a (d, N) matrix, got shape {v.shape}")
        d, n = v.shape
        if d < 2:
            raise ValueError(f"need at least two regimes, got d={d}")
        if n < 1:
            raise ValueError("need at least one grid node")
        if not np.all(np.isfinite(v)):
            raise ValueError("field contains non-finite entries")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def __array__(self, dtype=None, copy=None):
        if dtype is None and not copy:
            return self.values
        return np.array(self.values, dtype=dtype)


def field_values(u, d: int | None = None, n: int | None = None) -> np.ndarray:
    """Return ``u`` as a (d, N) float array, checking dimensions when given."""
    v = u.values if isinstance(u, RegimeField) else np.asarray(u, dtype=float)
    if v.ndim != 2:
        raise ValueError(f"expected a (d, N) matrix, got shape {v.shape}")
    if d is not None and v.shape != (d, n):
        raise ValueError(f"dimension mismatch: expected {(d, n)}, got {v.shape}")
    return v


@dataclass(frozen=True)
class SwitchingCostMatrix:
    """Pairwise costs c[i, j] >= 0 of switching from regime i to regime j.

    Diagonal entries are meaningless and stored as zero. A uniform scalar cost
    is the common case; build it with :meth:`uniform`.
    """

    costs: np.ndarray

    def __post_init__(self) -> None:
        c = np.array(self.costs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError(f"cost matrix must be square, got shape {c.shape}")
        if c.shape[0] < 2:
            raise ValueError("cost matrix needs at least two regimes")
        if not np.all(np.isfinite(c)):
            raise ValueError("cost matrix contains non-finite entries")
        np.fill_diagonal(c, 0.0)
        if np.any(c < 0.0):
            raise ValueError("switching costs must be nonnegative")
        c.flags.writeable = False
        object.__setattr__(self, "costs", c)

    @classmethod
    def uniform(cls, d: int, cost: float) -> "SwitchingCostMatrix":
        """All off-diagonal entries equal to ``cost``."""
        c = np.full((d, d), float(cost))
        np.fill_diagonal(c, 0.0)
        return cls(c)

    @property
    def d(self) -> int:
        return self.costs.shape[0]

    @property
    def min_cost(self) -> float:
        """Smallest off-diagonal cost."""
        off = self.costs[~np.eye(self.d, dtype=bool)]
        return float(off.min())

    @property
    def is_positive(self) -> bool:
        return self.min_cost > 0.0


def as_costs(costs, d: int) -> SwitchingCostMatrix:
    """Coerce a scalar, matrix, or SwitchingCostMatrix to a cost matrix of size d."""
    if isinstance(costs, SwitchingCostMatrix):
        if costs.d != d:
            raise ValueError(f"cost matrix is {costs.d}x{costs.d}, need {d}x{d}")
        return costs
    if np.isscalar(costs):
        return SwitchingCostMatrix.uniform(d, float(costs))
    return as_costs(SwitchingCostMatrix(np.asarray(costs)), d)


@dataclass(frozen=True)
class PenaltyFunction:
    """The penalty family pi(y) = (max(y, 0))**(1/sigma).

    ``tau`` is the constant in the lower bound pi(y) >= tau * y**(1/sigma) on
    the relevant range; it equals 1 for this family. The subderivative at the
    kink y=0 is taken to be 0, so the slant of a penalized residual on the
    constraint boundary coincides with the unpenalized one.
    """

    sigma: float = 1.0

    def __post_init__(self) -> None:
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ValueError(f"penalty degree must be positive, got {self.sigma}")

    @property
    def tau(self) -> float:
        return 1.0

    def __call__(self, y):
        return np.maximum(np.asarray(y, dtype=float), 0.0) ** (1.0 / self.sigma)

    def subderivative(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        out = np.zeros_like(y)
        pos = y > 0.0
        e = 1.0 / self.sigma
        out[pos] = e * y[pos] ** (e - 1.0)
        return out


class MonotoneSystem(abc.ABC):
    """A monotone map F on d-regime fields.

    Implementors supply the dimensions, the monotonicity constant gamma (the
    linear growth rate of F at argmax components, property-tested rather than
    inferred), the map itself, and a slanting operator in regime-major flat
    ordering (index i*N + l) used by the Newton solver.
    """

    @property
    @abc.abstractmethod
    def d(self) -> int: ...

    @property
    @abc.abstractmethod
    def N(self) -> int: ...

    @property
    @abc.abstractmethod
    def gamma(self) -> float: ...

    @abc.abstractmethod
    def evaluate(self, u) -> np.ndarray:
        """F(u) as a (d, N) array."""

    @abc.abstractmethod
    def slant_at(self, u) -> sp.spmatrix:
        """A generalized derivative of F at u, shape (d*N, d*N)."""

    @property
    def is_affine(self) -> bool:
        return False

    @property
    def norm_F0(self) -> float:
        """Cached sup-norm of F(0)."""
        cached = self.__dict__.get("_norm_F0")
        if cached is None:
            cached = sup_norm(self.evaluate(np.zeros((self.d, self.N))))
            self.__dict__["_norm_F0"] = cached
        return cached


class AffineSystem(MonotoneSystem):
    """F(u) = A vec(u) - b with constant slant A; vec is regime-major."""

    def __init__(self, matrix, rhs, gamma: float):
        b = field_values(rhs)
        self._d, self._n = b.shape
        a = sp.csr_matrix(matrix, dtype=float)
        size = self._d * self._n
        if a.shape != (size, size):
            raise ValueError(f"matrix shape {a.shape} does not match field size {size}")
        if not (np.isfinite(gamma) and gamma > 0):
            raise ValueError(f"gamma must be positive, got {gamma}")
        self._matrix = a
        self._rhs = b.ravel().copy()
        self._gamma = float(gamma)

    @property
    def d(self) -> int:
        return self._d

    @property
    def N(self) -> int:
        return self._n

    @property
    def gamma(self) -> float:
        return self._gamma

    @property
    def is_affine(self) -> bool:
        return True

    def evaluate(self, u) -> np.ndarray:
        v = field_values(u, self._d, self._n)
        return (self._matrix @ v.ravel() - self._rhs).reshape(self._d, self._n)

    def slant_at(self, u) -> sp.csr_matrix:
        return self._matrix


class ShiftedSystem(MonotoneSystem):
    """The base system with a constant subtracted: F(u) - shift."""

    def __init__(self, base: MonotoneSystem, shift: float):
        self._base = base
        self._shift = float(shift)

    @property
    def d(self) -> int:
        return self._base.d

    @property
    def N(self) -> int:
        return self._base.N

    @property
    def gamma(self) -> float:
        return self._base.gamma

    @property
    def is_affine(self) -> bool:
        return self._base.is_affine

    def evaluate(self, u) -> np.ndarray:
        return self._base.evaluate(u) - self._shift

    def slant_at(self, u) -> sp.spmatrix:
        return self._base.slant_at(u)


@dataclass(frozen=True)
class PenalizedProblem:
    """A system together with switching costs, penalty weight, and penalty family."""

    system: MonotoneSystem
    costs: SwitchingCostMatrix
    rho: float
    penalty: PenaltyFunction = field(default_factory=PenaltyFunction)

    def __post_init__(self) -> None:
        if not (np.isfinite(self.rho) and self.rho >= 0):
            raise ValueError(f"penalty weight must be nonnegative, got {self.rho}")
        if self.costs.d != self.system.d:
            raise ValueError(
                f"cost matrix is {self.costs.d}x{self.costs.d}, "
                f"system has {self.system.d} regimes"
            )


@dataclass
class SolveReport:
    """Iteration record of a solve.

    ``increments`` holds the relative increments
    ||u_k - u_{k-1}|| / max(||u_k||, scale) per iteration; ``residuals`` the
    residual sup-norm before the first and after every iteration.
    """

    iterations: int
    final_residual: float
    increments: list
    residuals: list
    elapsed_seconds: float
    converged: bool


def a_priori_bound(system: MonotoneSystem) -> float:
    """The uniform solution bound ||F(0)|| / gamma."""
    return system.norm_F0 / system.gamma


def intervention(u, costs, i: int):
    """Best switch out of regime i: values and arg-max regimes, elementwise.

    Returns ``(M_i u, regimes)`` where (M_i u)_l = max_{j != i}(u^j_l - c[i, j])
    and ``regimes[l]`` is the maximizing j, ties broken to the lowest index.
    """
    v = field_values(u)
    d = v.shape[0]
    costs = as_costs(costs, d)
    if not 0 <= i < d:
        raise ValueError(f"regime index {i} out of range for d={d}")
    others = np.array([j for j in range(d) if j != i])
    cand = v[others] - costs.costs[i, others][:, None]
    # argmax returns the first hit, which is the lowest competitor index
    k = np.argmax(cand, axis=0)
    cols = np.arange(v.shape[1])
    return cand[k, cols], others[k]


def _obstacles(v: np.ndarray, costs: SwitchingCostMatrix) -> np.ndarray:
    """Stack M_i v over all regimes i into a (d, N) array."""
    return np.stack([intervention(v, costs, i)[0] for i in range(v.shape[0])])


def qvi_residual(u, system: MonotoneSystem, costs) -> np.ndarray:
    """min(F_i(u), u^i - M_i u) per regime and node.

    Only defined for strictly positive switching costs; the zero-cost problem
    degenerates and must go through the penalized path instead.
    """
    v = field_values(u, system.d, system.N)
    costs = as_costs(costs, system.d)
    if not costs.is_positive:
        raise ValueError(
            "switching residual needs strictly positive costs; "
            "use the penalized or zero-cost path for c = 0"
        )
    return np.minimum(system.evaluate(v), v - _obstacles(v, costs))


def _penalty_args(v: np.ndarray, costs: SwitchingCostMatrix) -> np.ndarray:
    """Tensor of penalty arguments, entry [i, j, l] = v[j, l] - c[i, j] - v[i, l]."""
    return v[None, :, :] - costs.costs[:, :, None] - v[:, None, :]


def penalized_residual(u, prob: PenalizedProblem) -> np.ndarray:
    """F(u) - rho * sum_{j != i} pi(u^j - c[i, j] - u^i); equals F(u) at rho=0."""
    v = field_values(u, prob.system.d, prob.system.N)
    f = prob.system.evaluate(v)
    if prob.rho == 0.0:
        return f
    terms = prob.penalty(_penalty_args(v, prob.costs))
    d = v.shape[0]
    terms[np.arange(d), np.arange(d), :] = 0.0
    return f - prob.rho * terms.sum(axis=1)


def penalized_slant(u, prob: PenalizedProblem) -> sp.csr_matrix:
    """Slant of the penalized residual; degree-1 penalty only.

    Active terms (argument strictly positive) add +rho on the (i, l) diagonal
    and -rho at column (j, l); the kink at zero counts as inactive.
    """
    v = field_values(u, prob.system.d, prob.system.N)
    base = prob.system.slant_at(v).tocsr()
    if prob.rho == 0.0:
        return base
    if prob.penalty.sigma != 1.0:
        raise ValueError(
            f"Newton slant supports penalty degree 1 only, got sigma={prob.penalty.sigma}"
        )
    d, n = v.shape
    active = _penalty_args(v, prob.costs) > 0.0
    active[np.arange(d), np.arange(d), :] = False
    rows, cols, vals = [], [], []
    for i in range(d):
        for j in range(d):
            if j == i:
                continue
            idx = np.nonzero(active[i, j])[0]
            if idx.size == 0:
                continue
            rows.append(i * n + idx)
            cols.append(i * n + idx)
            vals.append(np.full(idx.size, prob.rho))
            rows.append(i * n + idx)
            cols.append(j * n + idx)
            vals.append(np.full(idx.size, -prob.rho))
    if not rows:
        return base
    extra = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=base.shape,
    )
    return (base + extra).tocsr()
