"""Adversary prediction: entropy-regularized goal-directed behavior.

The adversary expects the team to reach its target goal distribution
through cheap trajectories with a tunable amount of inefficiency. That
expectation is the solution of a convex program over occupancy measures:
minimize total cost plus ``beta`` times the relative entropy of each
state's action split against its residence mass, subject to flow balance
and exact goal-inflow constraints.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleError, SolverFailure, ValidationError
from .game import AllocationStrategy
from .mdp import (Mdp, OccupancyMeasure, Policy, StatePartition,
                  policy_from_occupancy)
from .solver import (DEFAULT_TOL, EntropyTerm, LinearProgram,
                     RelativeEntropyProgram, SolveReport, SolveStatus,
                     solve_lp, solve_rep)


class OccupancyIndex:
    """Flat variable layout over (transient state, action) pairs.

    Also assembles the two shared constraint blocks: flow balance at every
    transient state (residence minus inflow equals initial mass) and the
    per-goal inflow rows.
    """

    def __init__(self, mdp: Mdp, partition: StatePartition):
        self.mdp = mdp
        self.partition = partition
        self.offsets = {}
        n = 0
        for s in partition.transient:
            self.offsets[s] = n
            n += mdp.n_actions(s)
        self.n_vars = n

    def column(self, s: int, a: int) -> int:
        return self.offsets[s] + a

    def flow_matrix(self) -> tuple[sp.csr_matrix, np.ndarray]:
        transient = self.partition.transient
        row_of = {s: i for i, s in enumerate(transient)}
        mat = sp.lil_matrix((len(transient), self.n_vars))
        for s in transient:
            for a in range(self.mdp.n_actions(s)):
                col = self.column(s, a)
                mat[row_of[s], col] += 1.0
                targets, probs = self.mdp.transitions[s][a]
                for t, p in zip(targets, probs):
                    if t in row_of:
                        mat[row_of[t], col] -= p
        rhs = self.mdp.initial[list(transient)]
        return mat.tocsr(), rhs

    def goal_matrix(self) -> sp.csr_matrix:
        goal_row = {g: j for j, g in enumerate(self.partition.goals)}
        mat = sp.lil_matrix((len(goal_row), self.n_vars))
        for s in self.partition.transient:
            for a in range(self.mdp.n_actions(s)):
                targets, probs = self.mdp.transitions[s][a]
                for t, p in zip(targets, probs):
                    if t in goal_row:
                        mat[goal_row[t], self.column(s, a)] += p
        return mat.tocsr()

    def entropy_terms(self, beta: float) -> tuple[EntropyTerm, ...]:
        """Per-variable terms beta * x(s,a) * log(x(s,a) / nu(s))."""
        terms = []
        for s in self.partition.transient:
            block = [(self.column(s, a), 1.0) for a in range(self.mdp.n_actions(s))]
            for a in range(self.mdp.n_actions(s)):
                terms.append(EntropyTerm(weight=beta, x_index=self.column(s, a),
                                         y_coeffs=tuple(block)))
        return tuple(terms)

    def to_measure(self, x: np.ndarray) -> OccupancyMeasure:
        values = [np.zeros(self.mdp.n_actions(s)) for s in range(self.mdp.n_states)]
        for s in self.partition.transient:
            off = self.offsets[s]
            values[s] = x[off:off + self.mdp.n_actions(s)]
        return OccupancyMeasure.from_raw(values)


@dataclass(frozen=True, eq=False)
class PredictionSpec:
    """Inputs of one prediction solve.

    ``cost`` is a scalar applied to every transient (state, action) pair or
    a mapping (state label, action label) -> cost. ``beta`` weights the
    entropy regularizer: zero demands fully efficient behavior, larger
    values expect more exploration.
    """

    mdp: Mdp
    partition: StatePartition
    target: AllocationStrategy
    cost: float | Mapping = 10.0
    beta: float = 1.0

    def __post_init__(self):
        if self.beta < 0:
            raise ValidationError("beta must be nonnegative")
        if len(self.target.weights) != len(self.partition.goals):
            raise ValidationError("target allocation does not match the goal list")
        for s in self.partition.transient:
            for a in range(self.mdp.n_actions(s)):
                if self.cost_of(s, a) < 0:
                    raise ValidationError("costs must be nonnegative")

    def cost_of(self, s: int, a: int) -> float:
        if isinstance(self.cost, Mapping):
            key = (self.mdp.labels[s], self.mdp.actions[s][a])
            if key not in self.cost:
                raise ValidationError(f"missing cost entry for {key!r}")
            return float(self.cost[key])
        return float(self.cost)

    def cost_vector(self, index: OccupancyIndex) -> np.ndarray:
        c = np.zeros(index.n_vars)
        for s in self.partition.transient:
            for a in range(self.mdp.n_actions(s)):
                c[index.column(s, a)] = self.cost_of(s, a)
        return c


@dataclass(frozen=True, eq=False)
class CostCondition:
    """Outcome of the boundedness check ``c(s,a) >= beta * log |A(s)|``."""

    ok: bool
    margins: dict


@dataclass(frozen=True, eq=False)
class PredictionResult:
    policy: Policy
    occupancy: OccupancyMeasure
    objective: float
    report: SolveReport


def check_cost_condition(spec: PredictionSpec) -> CostCondition:
    """Check the sufficient condition for the prediction program to be bounded.

    Returns per-transient-state margins ``min_a c(s,a) - beta * log |A(s)|``;
    the condition holds iff every margin is nonnegative.
    """
    margins = {}
    ok = True
    for s in spec.partition.transient:
        need = spec.beta * math.log(spec.mdp.n_actions(s))
        worst = min(spec.cost_of(s, a) for a in range(spec.mdp.n_actions(s)))
        margins[spec.mdp.labels[s]] = worst - need
        if worst < need:
            ok = False
    return CostCondition(ok=ok, margins=margins)


def _constraint_blocks(mdp: Mdp, partition: StatePartition,
                       target: AllocationStrategy):
    index = OccupancyIndex(mdp, partition)
    flow, flow_rhs = index.flow_matrix()
    goal = index.goal_matrix()
    a_eq = sp.vstack([flow, goal]).tocsr()
    b_eq = np.concatenate([flow_rhs, target.weights])
    return index, a_eq, b_eq


def check_allocation_feasibility(mdp: Mdp, partition: StatePartition,
                                 target: AllocationStrategy,
                                 tol: float = DEFAULT_TOL) -> bool:
    """Whether some occupancy realizes the target goal distribution.

    Initial mass sitting on dead or goal states cannot be routed by any
    policy, so such instances are rejected outright.
    """
    if len(target.weights) != len(partition.goals):
        raise ValidationError("target allocation does not match the goal list")
    if any(mdp.initial[s] > 0 for s in partition.dead):
        return False
    if any(mdp.initial[g] > 0 for g in partition.goals):
        return False
    index, a_eq, b_eq = _constraint_blocks(mdp, partition, target)
    lp = LinearProgram(objective=np.zeros(index.n_vars), a_eq=a_eq, b_eq=b_eq)
    report = solve_lp(lp, tol=tol)
    if report.status is SolveStatus.OPTIMAL:
        return True
    if report.status is SolveStatus.INFEASIBLE:
        return False
    raise SolverFailure(f"feasibility check ended {report.status.value}",
                        report=report)


def min_expected_time(mdp: Mdp, partition: StatePartition,
                      target: AllocationStrategy,
                      tol: float = DEFAULT_TOL) -> float:
    """Minimum expected number of steps to realize the target distribution."""
    index, a_eq, b_eq = _constraint_blocks(mdp, partition, target)
    lp = LinearProgram(objective=np.ones(index.n_vars), a_eq=a_eq, b_eq=b_eq)
    report = solve_lp(lp, tol=tol)
    if report.status is SolveStatus.INFEASIBLE:
        raise InfeasibleError("min_expected_time",
                              "target allocation is not realizable")
    if report.status is not SolveStatus.OPTIMAL:
        raise SolverFailure(f"residence-time LP ended {report.status.value}",
                            report=report)
    return float(report.objective)


def predict_policy(spec: PredictionSpec, tol: float = DEFAULT_TOL) -> PredictionResult:
    """Expected behavior for reaching the target allocation.

    Refuses to run unless the cost condition and allocation feasibility both
    hold (the program could otherwise be unbounded or empty). The returned
    policy is defined on every state: occupancy ratios where residence mass
    is positive, uniform elsewhere.
    """
    condition = check_cost_condition(spec)
    if not condition.ok:
        worst = min(condition.margins.values())
        raise InfeasibleError("check_cost_condition",
                              f"cost must be >= beta * log|A(s)| everywhere "
                              f"(worst margin {worst:.6g})")
    if not check_allocation_feasibility(spec.mdp, spec.partition, spec.target, tol=tol):
        raise InfeasibleError("check_allocation_feasibility",
                              "target allocation is not realizable from the "
                              "initial distribution")

    index, a_eq, b_eq = _constraint_blocks(spec.mdp, spec.partition, spec.target)
    base = LinearProgram(objective=spec.cost_vector(index), a_eq=a_eq, b_eq=b_eq)
    if spec.beta > 0:
        report = solve_rep(RelativeEntropyProgram(
            base=base, terms=index.entropy_terms(spec.beta)), tol=tol)
    else:
        report = solve_lp(base, tol=tol)
    if report.status is not SolveStatus.OPTIMAL:
        raise SolverFailure(f"prediction solve ended {report.status.value}",
                            report=report)
    occupancy = index.to_measure(report.x)
    policy = policy_from_occupancy(occupancy, spec.mdp)
    return PredictionResult(policy=policy, occupancy=occupancy,
                            objective=float(report.objective), report=report)


def per_state_objective(spec: PredictionSpec, occupancy: OccupancyMeasure) -> dict:
    """Each transient state's contribution to the prediction objective.

    Under the cost condition every contribution is nonnegative (up to
    round-off), which is what keeps the program bounded.
    """
    theta = {}
    for s in spec.partition.transient:
        row = occupancy.values[s]
        mass = float(row.sum())
        value = sum(row[a] * spec.cost_of(s, a) for a in range(len(row)))
        if mass > 0:
            pos = row > 0
            value += spec.beta * float((row[pos] * np.log(row[pos] / mass)).sum())
        theta[spec.mdp.labels[s]] = value
    return theta
