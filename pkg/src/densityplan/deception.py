"""Deceptive occupancy synthesis on the time-layered MDP.

Behavior is split at a switch time: during layers up to the switch the team
optimizes a deception objective against the adversary's predicted policies,
afterwards it heads for the target goal distribution with minimal residence
time. Exaggeration solves one LP per candidate utility matrix, rewarding
behavior that looks like a decoy prediction relative to the true one.
Ambiguity solves a single program that caps the worst-case statistical
distance to every prediction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleError, SolverFailure, ValidationError
from .game import AllocationStrategy
from .mdp import (ExtendedMdp, OccupancyMeasure, Policy, StatePartition,
                  policy_from_occupancy)
from .prediction import check_allocation_feasibility
from .solver import (DEFAULT_TOL, EntropyTerm, LinearProgram,
                     RelativeEntropyProgram, SolveReport, SolveStatus,
                     _entropy_value, _residuals, solve_lp, solve_rep)

MODE_EXAGGERATION = "exaggeration"
MODE_AMBIGUITY = "ambiguity"
MODES = (MODE_EXAGGERATION, MODE_AMBIGUITY)


def choose_switch_time(multiple: int, t_min: float) -> int:
    """Switch time as a multiple of the rounded-up minimum expected time.

    ``t_min`` is snapped down by 1e-6 first so LP round-off just above an
    integer does not inflate the ceiling.
    """
    if multiple < 1:
        raise ValidationError("switch-time multiple must be at least 1")
    if t_min <= 0:
        raise ValidationError("minimum expected time must be positive")
    return int(multiple) * int(math.ceil(t_min - 1e-6))


def virtual_reward(pi_i: Policy, pi_true: Policy, epsilon: float) -> tuple[np.ndarray, ...]:
    """Per-(state, action) reward log((pi_i + eps) / (pi_true + eps)).

    The smoothing keeps the reward finite under support mismatch; it is
    antisymmetric in the two policies by construction.
    """
    if epsilon <= 0:
        raise ValidationError("epsilon must be positive")
    if len(pi_i.rows) != len(pi_true.rows):
        raise ValidationError("policies cover different state spaces")
    return tuple(np.log(ri + epsilon) - np.log(rt + epsilon)
                 for ri, rt in zip(pi_i.rows, pi_true.rows))


@dataclass(frozen=True, eq=False)
class DeceptionSpec:
    """Inputs of one synthesis run.

    ``predicted`` holds the adversary's expected base-state policies with
    the true matrix's prediction first. ``target`` is the goal distribution
    the synthesized behavior must realize exactly.
    """

    ext: ExtendedMdp
    partition: StatePartition
    predicted: tuple[Policy, ...]
    target: AllocationStrategy
    epsilon: float = 1e-6
    mode: str = MODE_EXAGGERATION

    def __post_init__(self):
        if len(self.predicted) < 1:
            raise ValidationError("need at least one predicted policy")
        if not (0 < self.epsilon <= 1):
            raise ValidationError("epsilon must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}")
        for pi in self.predicted:
            if len(pi.rows) != self.ext.base.n_states:
                raise ValidationError("predicted policies must cover the base states")
        if len(self.target.weights) != len(self.partition.goals):
            raise ValidationError("target allocation does not match the goal list")


@dataclass(frozen=True, eq=False)
class SynthesisResult:
    """Synthesized layered occupancy and policy plus solver bookkeeping.

    ``values`` holds the per-candidate LP optima for exaggeration (the first
    entry belongs to the true matrix and carries zero reward by construction)
    or the single worst-case divergence level for ambiguity. ``chosen`` is
    the exaggerated candidate index (smallest index on ties, which are
    recorded in ``tied``).
    """

    mode: str
    occupancy: OccupancyMeasure
    policy: Policy
    values: tuple[float, ...]
    chosen: int | None
    tied: tuple[int, ...]
    goal_inflow: np.ndarray
    tail_residence: float
    reports: tuple[SolveReport, ...]


class _LayeredIndex:
    """Variables over (transient base state, layer, action).

    Goal states carry no variables in any layer; inflow into a goal at any
    layer counts toward that goal's allocation row.
    """

    def __init__(self, ext: ExtendedMdp, partition: StatePartition):
        self.ext = ext
        self.partition = partition
        self.layers = ext.horizon + 1
        self.offsets = {}
        n = 0
        for t in range(1, self.layers + 1):
            for s in partition.transient:
                self.offsets[(s, t)] = n
                n += ext.base.n_actions(s)
        self.n_vars = n

    def column(self, s: int, t: int, a: int) -> int:
        return self.offsets[(s, t)] + a

    def flow_matrix(self) -> tuple[sp.csr_matrix, np.ndarray]:
        base = self.ext.base
        transient = self.partition.transient
        row_of = {(s, t): i
                  for i, (s, t) in enumerate((s, t)
                                             for t in range(1, self.layers + 1)
                                             for s in transient)}
        mat = sp.lil_matrix((len(row_of), self.n_vars))
        rhs = np.zeros(len(row_of))
        for (s, t), col0 in self.offsets.items():
            for a in range(base.n_actions(s)):
                col = col0 + a
                mat[row_of[(s, t)], col] += 1.0
                # Mass leaving (s, t) arrives in the next layer, or stays in
                # the final layer once the process has switched.
                t_next = t + 1 if t <= self.ext.horizon else t
                targets, probs = base.transitions[s][a]
                for tgt, p in zip(targets, probs):
                    key = (int(tgt), t_next)
                    if key in row_of:
                        mat[row_of[key], col] -= p
        for i, s in enumerate(transient):
            rhs[i] = base.initial[s]
        return mat.tocsr(), rhs

    def goal_matrix(self) -> sp.csr_matrix:
        base = self.ext.base
        goal_row = {g: j for j, g in enumerate(self.partition.goals)}
        mat = sp.lil_matrix((len(goal_row), self.n_vars))
        for (s, t), col0 in self.offsets.items():
            for a in range(base.n_actions(s)):
                targets, probs = base.transitions[s][a]
                for tgt, p in zip(targets, probs):
                    if tgt in goal_row:
                        mat[goal_row[tgt], col0 + a] += p
        return mat.tocsr()

    def tail_vector(self) -> np.ndarray:
        vec = np.zeros(self.n_vars)
        for (s, t), col0 in self.offsets.items():
            if t == self.layers:
                vec[col0:col0 + self.ext.base.n_actions(s)] = 1.0
        return vec

    def phase_vector(self, per_state: Sequence[np.ndarray]) -> np.ndarray:
        """Spread per-(base state, action) coefficients over layers before the switch."""
        vec = np.zeros(self.n_vars)
        for (s, t), col0 in self.offsets.items():
            if t <= self.ext.horizon:
                vec[col0:col0 + self.ext.base.n_actions(s)] = per_state[s]
        return vec

    def to_measure(self, x: np.ndarray) -> OccupancyMeasure:
        flat = self.ext.mdp
        values = [np.zeros(flat.n_actions(i)) for i in range(flat.n_states)]
        for (s, t), col0 in self.offsets.items():
            idx = self.ext.index_of(s, t)
            values[idx] = x[col0:col0 + self.ext.base.n_actions(s)]
        return OccupancyMeasure.from_raw(values)


def _precheck(spec: DeceptionSpec, tol: float):
    if not check_allocation_feasibility(spec.ext.base, spec.partition,
                                        spec.target, tol=tol):
        raise InfeasibleError("check_allocation_feasibility",
                              "target allocation is not realizable from the "
                              "initial distribution")


def _finish(index: _LayeredIndex, x: np.ndarray, mode: str,
            values: tuple[float, ...], chosen, tied,
            reports: tuple[SolveReport, ...]) -> SynthesisResult:
    occupancy = index.to_measure(x)
    policy = policy_from_occupancy(occupancy, index.ext.mdp)
    goal_inflow = np.asarray(index.goal_matrix() @ x).reshape(-1)
    tail = float(index.tail_vector() @ x)
    return SynthesisResult(mode=mode, occupancy=occupancy, policy=policy,
                           values=values, chosen=chosen, tied=tied,
                           goal_inflow=goal_inflow, tail_residence=tail,
                           reports=reports)


def build_exaggeration_programs(spec: DeceptionSpec) -> tuple[LinearProgram, ...]:
    """The per-candidate LPs solved by synthesize_exaggeration.

    Exposed so the exact same program data can be re-solved by a second
    method (``solve_lp(p, method="conic")``) for cross-checking.
    """
    index = _LayeredIndex(spec.ext, spec.partition)
    flow, flow_rhs = index.flow_matrix()
    goal = index.goal_matrix()
    a_eq = sp.vstack([flow, goal]).tocsr()
    b_eq = np.concatenate([flow_rhs, spec.target.weights])
    tail = index.tail_vector()
    programs = []
    for pi_i in spec.predicted:
        reward = virtual_reward(pi_i, spec.predicted[0], spec.epsilon)
        objective = index.phase_vector(reward) - tail
        programs.append(LinearProgram(objective=objective, maximize=True,
                                      a_eq=a_eq, b_eq=b_eq))
    return tuple(programs)


def synthesize_exaggeration(spec: DeceptionSpec, tol: float = DEFAULT_TOL) -> SynthesisResult:
    """Pick the decoy candidate whose pretended pursuit scores best.

    For each candidate i the LP maximizes the accumulated virtual reward of
    looking like prediction i (relative to the true prediction) during the
    deception phase, minus the residence time spent after the switch. The
    best candidate's occupancy is returned; ties break to the smallest index.
    """
    if spec.mode != MODE_EXAGGERATION:
        raise ValidationError("spec mode is not exaggeration")
    _precheck(spec, tol)
    index = _LayeredIndex(spec.ext, spec.partition)
    reports = []
    xs = []
    for lp in build_exaggeration_programs(spec):
        report = solve_lp(lp, tol=tol)
        if report.status is SolveStatus.INFEASIBLE:
            raise InfeasibleError(
                "synthesize_exaggeration",
                "target allocation is not realizable in the layered process")
        if report.status is not SolveStatus.OPTIMAL:
            raise SolverFailure(f"exaggeration LP ended {report.status.value}",
                                report=report)
        reports.append(report)
        xs.append(report.x)

    values = np.array([r.objective for r in reports])
    best = float(values.max())
    tied = tuple(int(i) for i in np.flatnonzero(values >= best - 1e-9))
    chosen = tied[0]
    return _finish(index, xs[chosen], MODE_EXAGGERATION,
                   tuple(float(v) for v in values), chosen, tied, tuple(reports))


def synthesize_ambiguity(spec: DeceptionSpec, tol: float = DEFAULT_TOL) -> SynthesisResult:
    """Keep every prediction plausible during the deception phase.

    One convex program minimizes post-switch residence plus a bound ``z`` on
    the relative entropy between the synthesized phase behavior and each
    smoothed prediction; ``values`` carries the optimal ``z``.
    """
    if spec.mode != MODE_AMBIGUITY:
        raise ValidationError("spec mode is not ambiguity")
    _precheck(spec, tol)
    index = _LayeredIndex(spec.ext, spec.partition)
    flow, flow_rhs = index.flow_matrix()
    goal = index.goal_matrix()
    n = index.n_vars
    z_col = n

    a_eq = sp.hstack([sp.vstack([flow, goal]),
                      sp.csr_matrix((flow.shape[0] + goal.shape[0], 1))]).tocsr()
    b_eq = np.concatenate([flow_rhs, spec.target.weights])

    n_pred = len(spec.predicted)
    a_ub = sp.lil_matrix((n_pred, n + 1))
    for i in range(n_pred):
        a_ub[i, z_col] = -1.0
    terms = []
    for i, pi_i in enumerate(spec.predicted):
        for (s, t), col0 in index.offsets.items():
            if t > spec.ext.horizon:
                continue
            n_a = spec.ext.base.n_actions(s)
            block = [col0 + a for a in range(n_a)]
            for a in range(n_a):
                smoothed = float(pi_i.rows[s][a]) + spec.epsilon
                terms.append(EntropyTerm(
                    weight=1.0, x_index=col0 + a,
                    y_coeffs=tuple((c, smoothed) for c in block),
                    row=i))

    objective = np.zeros(n + 1)
    objective[:n] = index.tail_vector()
    objective[z_col] = 1.0
    lower = np.zeros(n + 1)
    lower[z_col] = -np.inf
    base = LinearProgram(objective=objective, a_eq=a_eq, b_eq=b_eq,
                         a_ub=a_ub.tocsr(), b_ub=np.zeros(n_pred), lower=lower)
    terms = tuple(terms)
    report = solve_rep(RelativeEntropyProgram(base=base, terms=terms), tol=tol)
    if report.status is SolveStatus.INFEASIBLE:
        raise InfeasibleError(
            "synthesize_ambiguity",
            "target allocation is not realizable in the layered process")
    repairable = (report.status is SolveStatus.NUMERICAL_FAILURE
                  and report.x is not None
                  and report.max_equality_violation <= tol)
    if report.status is not SolveStatus.OPTIMAL and not repairable:
        raise SolverFailure(f"ambiguity solve ended {report.status.value}",
                            report=report)
    # Interior-point slack spread over thousands of exponential cones can
    # leave the shared bound variable a little below the recomputed
    # divergences. Repair by pinning it to the exact worst case at the
    # returned occupancy, which is feasible by construction.
    x = report.x.copy()
    x[z_col] = max(_entropy_value(x, terms, i) for i in range(n_pred))
    eq_viol, cone_viol = _residuals(base, x, terms)
    if max(eq_viol, cone_viol) > tol:
        raise SolverFailure("ambiguity solution failed residual checks after repair",
                            report=report)
    report = SolveReport(status=SolveStatus.OPTIMAL,
                         objective=float(base.objective @ x), x=x,
                         max_equality_violation=eq_viol,
                         max_cone_violation=cone_viol,
                         iterations=report.iterations,
                         wall_time=report.wall_time)
    return _finish(index, x[:n], MODE_AMBIGUITY, (float(x[z_col]),), None, (),
                   (report,))


def goal_directed_occupancy(ext: ExtendedMdp, partition: StatePartition,
                            target: AllocationStrategy,
                            tol: float = DEFAULT_TOL):
    """Reference behavior: realize the target in minimum total residence time.

    Used as the honest, non-deceptive baseline when scoring synthesized
    behaviors. Returns (occupancy, policy, report).
    """
    index = _LayeredIndex(ext, partition)
    flow, flow_rhs = index.flow_matrix()
    goal = index.goal_matrix()
    a_eq = sp.vstack([flow, goal]).tocsr()
    b_eq = np.concatenate([flow_rhs, target.weights])
    lp = LinearProgram(objective=np.ones(index.n_vars), a_eq=a_eq, b_eq=b_eq)
    report = solve_lp(lp, tol=tol)
    if report.status is not SolveStatus.OPTIMAL:
        raise SolverFailure(f"goal-directed LP ended {report.status.value}",
                            report=report)
    occupancy = index.to_measure(report.x)
    return occupancy, policy_from_occupancy(occupancy, ext.mdp), report
