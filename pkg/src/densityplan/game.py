"""Zero-sum resource-allocation games over goal states.

The row player (team 1) picks a distribution over goals to maximize
``sigma1' U sigma2``; the column player (team 2) picks one to minimize it.
Values and a saddle point come from a pair of linear programs; because the
equilibrium sets are generally polytopes, a second, convex stage selects
the unique maximum-entropy strategy inside each player's security polytope.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleError, SolverFailure, ValidationError
from .solver import (DEFAULT_TOL, EntropyTerm, LinearProgram,
                     RelativeEntropyProgram, SolveStatus, solve_lp, solve_rep)

SADDLE_TOL = 1e-7
# Security constraints are relaxed by this much before the entropy stage so
# LP round-off in the game value cannot empty the polytope.
SECURITY_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class UtilityMatrix:
    """Square payoff matrix; entry (i, j) is gained by team 1 and lost by team 2."""

    entries: np.ndarray
    goals: tuple[Hashable, ...] | None = None

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        object.__setattr__(self, "entries", e)
        if e.ndim != 2 or e.shape[0] != e.shape[1] or e.shape[0] < 1:
            raise ValidationError("utility matrix must be square and nonempty")
        if not np.all(np.isfinite(e)):
            raise ValidationError("utility matrix entries must be finite")
        if self.goals is not None and len(self.goals) != e.shape[0]:
            raise ValidationError("goal labels do not match matrix size")

    @property
    def k(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class AllocationStrategy:
    """Probability vector over the ordered goal states."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        object.__setattr__(self, "weights", w)
        if w.ndim != 1 or len(w) < 1:
            raise ValidationError("allocation must be a nonempty vector")
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValidationError("allocation weights must form a distribution")

    @staticmethod
    def from_raw(w: np.ndarray) -> "AllocationStrategy":
        """Clean solver round-off and renormalize exactly.

        Components below 1e-9 are solver noise, not support: they get
        snapped to exact zeros so downstream programs see clean targets.
        """
        w = np.asarray(w, dtype=float)
        if np.any(w < -1e-7):
            raise ValidationError("allocation weights significantly negative")
        w = np.where(w < 1e-9, 0.0, w)
        return AllocationStrategy(w / w.sum())

    def entropy(self) -> float:
        w = self.weights[self.weights > 0]
        return float(-(w * np.log(w)).sum())


@dataclass(frozen=True, eq=False)
class GameSolution:
    value: float
    sigma1: AllocationStrategy
    sigma2: AllocationStrategy


def best_response_value(u: UtilityMatrix, sigma: AllocationStrategy, player: int) -> float:
    """Security level of a strategy: the payoff its worst-case opponent allows."""
    if player == 1:
        return float(np.min(sigma.weights @ u.entries))
    if player == 2:
        return float(np.max(u.entries @ sigma.weights))
    raise ValidationError("player must be 1 or 2")


def _security_lp(u: UtilityMatrix, player: int) -> LinearProgram:
    # Variables: k strategy weights plus the bound variable.
    k = u.k
    obj = np.zeros(k + 1)
    obj[k] = 1.0
    rows = sp.lil_matrix((k, k + 1))
    if player == 1:
        # maximize v with  v <= (sigma' U)_j  for every pure column j
        for j in range(k):
            rows[j, :k] = -u.entries[:, j]
            rows[j, k] = 1.0
    else:
        # minimize w with  (U sigma)_i <= w  for every pure row i
        for i in range(k):
            rows[i, :k] = u.entries[i, :]
            rows[i, k] = -1.0
    a_eq = sp.lil_matrix((1, k + 1))
    a_eq[0, :k] = 1.0
    lower = np.zeros(k + 1)
    lower[k] = -np.inf
    return LinearProgram(objective=obj, maximize=(player == 1),
                         a_eq=a_eq.tocsr(), b_eq=np.array([1.0]),
                         a_ub=rows.tocsr(), b_ub=np.zeros(k),
                         lower=lower)


def solve_zero_sum(u: UtilityMatrix, tol: float = DEFAULT_TOL) -> GameSolution:
    """Game value and one saddle-point strategy pair, via two linear programs."""
    reports = [solve_lp(_security_lp(u, player), tol=tol) for player in (1, 2)]
    for player, report in zip((1, 2), reports):
        if report.status is not SolveStatus.OPTIMAL:
            raise SolverFailure(
                f"zero-sum LP for player {player} ended {report.status.value}",
                report=report)
    sigma1 = AllocationStrategy.from_raw(reports[0].x[:u.k])
    sigma2 = AllocationStrategy.from_raw(reports[1].x[:u.k])
    value = float(sigma1.weights @ u.entries @ sigma2.weights)
    lo = best_response_value(u, sigma1, 1)
    hi = best_response_value(u, sigma2, 2)
    if not (lo >= value - SADDLE_TOL and hi <= value + SADDLE_TOL):
        raise SolverFailure(
            f"saddle verification failed: security levels {lo}, {hi} vs value {value}")
    return GameSolution(value=value, sigma1=sigma1, sigma2=sigma2)


def _secure_enough(u: UtilityMatrix, sigma: AllocationStrategy, value: float,
                   player: int) -> bool:
    level = best_response_value(u, sigma, player)
    if player == 1:
        return level >= value - SECURITY_SLACK
    return level <= value + SECURITY_SLACK


def _entropy_stage(u: UtilityMatrix, value: float, player: int, support):
    """Maximize entropy over the security polytope restricted to a support."""
    k = len(support)
    cols = u.entries[np.ix_(support, range(u.k))]
    rows = sp.lil_matrix((u.k, k))
    if player == 1:
        for j in range(u.k):
            rows[j, :] = -cols[:, j]
        b_ub = np.full(u.k, -(value - SECURITY_SLACK))
    else:
        for i in range(u.k):
            rows[i, :] = u.entries[i, support]
        b_ub = np.full(u.k, value + SECURITY_SLACK)
    a_eq = sp.csr_matrix(np.ones((1, k)))
    base = LinearProgram(objective=np.zeros(k), a_eq=a_eq, b_eq=np.array([1.0]),
                         a_ub=rows.tocsr(), b_ub=b_ub)
    # max sum(-w log w) == min sum(w log(w / 1))
    terms = tuple(EntropyTerm(weight=1.0, x_index=i, y_const=1.0) for i in range(k))
    return solve_rep(RelativeEntropyProgram(base=base, terms=terms))


def max_entropy_equilibrium(u: UtilityMatrix, value: float, player: int) -> AllocationStrategy:
    """The entropy-maximizing strategy in a player's equilibrium polytope.

    The polytope consists of all mixed strategies whose security level is no
    worse than the game value; Shannon entropy is strictly concave, so the
    maximizer is unique. The interior-point answer is polished on its
    support: when the uniform distribution over the detected support is
    itself secure it is the exact optimum, otherwise the program is re-run
    without the near-zero components (whose barrier blowup limits accuracy).
    """
    if player not in (1, 2):
        raise ValidationError("player must be 1 or 2")
    k = u.k
    report = _entropy_stage(u, value, player, list(range(k)))
    if report.status is SolveStatus.INFEASIBLE:
        raise InfeasibleError("max_entropy_equilibrium",
                              f"no strategy achieves value {value} for player {player}")
    if report.status is not SolveStatus.OPTIMAL:
        raise SolverFailure(
            f"entropy maximization ended {report.status.value}", report=report)
    support = [i for i in range(k) if report.x[i] > 1e-7]

    uniform = np.zeros(k)
    uniform[support] = 1.0 / len(support)
    candidate = AllocationStrategy(uniform)
    if _secure_enough(u, candidate, value, player):
        # Feasible and entropy log|support| >= any support-restricted
        # distribution, so this is the exact maximizer.
        return candidate

    if len(support) < k:
        polished = _entropy_stage(u, value, player, support)
        if polished.status is SolveStatus.OPTIMAL:
            full = np.zeros(k)
            full[support] = polished.x
            return AllocationStrategy.from_raw(full)
    return AllocationStrategy.from_raw(report.x)
