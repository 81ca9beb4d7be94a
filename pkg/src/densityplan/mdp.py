"""Finite MDPs, occupancy measures, and the time-layered extension.

States are integer indices with hashable labels riding along for I/O.
Every container is frozen after construction and every operation is a
pure function of its arguments (plus an explicit seed where sampling is
involved), so values can be shared freely across threads.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import NumericalError, ValidationError

Cell = tuple[int, int]

GRID_ACTIONS = ("up", "down", "right", "left")
_GRID_MOVES = {"up": (0, 1), "down": (0, -1), "right": (1, 0), "left": (-1, 0)}

# Transition rows and the initial distribution must be exact to this tolerance.
PROB_TOL = 1e-12
# Policy rows may carry solver round-off up to this tolerance.
POLICY_ROW_TOL = 1e-9
# Solver outputs in [-OCCUPANCY_CLAMP, 0) are clamped to zero; lower is an error.
OCCUPANCY_CLAMP = 1e-9
# Below this residence mass the policy extraction falls back to uniform.
NU_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Mdp:
    """Finite MDP with per-state action sets.

    ``transitions[s][a]`` is a pair ``(targets, probs)`` of aligned arrays
    giving the support of the successor distribution.
    """

    labels: tuple[Hashable, ...]
    actions: tuple[tuple[Hashable, ...], ...]
    transitions: tuple[tuple[tuple[np.ndarray, np.ndarray], ...], ...]
    initial: np.ndarray

    def __post_init__(self):
        n = len(self.labels)
        if len(set(self.labels)) != n:
            raise ValidationError("state labels must be unique")
        if len(self.actions) != n or len(self.transitions) != n:
            raise ValidationError("actions/transitions must align with states")
        for s in range(n):
            if not self.actions[s]:
                raise ValidationError(f"state {self.labels[s]!r} has no actions")
            if len(self.transitions[s]) != len(self.actions[s]):
                raise ValidationError(f"transition rows of {self.labels[s]!r} misaligned")
            for a, (targets, probs) in enumerate(self.transitions[s]):
                if len(targets) != len(probs) or len(targets) == 0:
                    raise ValidationError(f"empty transition row at {self.labels[s]!r}")
                if np.any(probs < 0) or abs(float(probs.sum()) - 1.0) > PROB_TOL:
                    raise ValidationError(
                        f"transition probabilities at ({self.labels[s]!r}, "
                        f"{self.actions[s][a]!r}) do not form a distribution"
                    )
                if np.any(targets < 0) or np.any(targets >= n):
                    raise ValidationError("transition target out of range")
        if self.initial.shape != (n,):
            raise ValidationError("initial distribution misaligned with states")
        if np.any(self.initial < 0) or abs(float(self.initial.sum()) - 1.0) > PROB_TOL:
            raise ValidationError("initial distribution must sum to one")
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(self.labels)})

    @property
    def n_states(self) -> int:
        return len(self.labels)

    def index_of(self, label) -> int:
        try:
            return self._index[label]
        except KeyError:
            raise ValidationError(f"unknown state {label!r}") from None

    def n_actions(self, s: int) -> int:
        return len(self.actions[s])

    def is_absorbing(self, s: int) -> bool:
        return all(
            len(targets) == 1 and targets[0] == s and probs[0] == 1.0
            for targets, probs in self.transitions[s]
        )

    def transition_prob(self, s: int, a: int, s2: int) -> float:
        targets, probs = self.transitions[s][a]
        hits = np.flatnonzero(targets == s2)
        return float(probs[hits[0]]) if hits.size else 0.0


@dataclass(frozen=True)
class StatePartition:
    """Goal / dead / transient split of the state space.

    ``dead`` states have no positive-probability path to any goal and carry
    no decision variables in any program downstream.
    """

    goals: tuple[int, ...]
    dead: frozenset[int]
    transient: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class Policy:
    """Stationary policy: one distribution over the available actions per state."""

    rows: tuple[np.ndarray, ...]

    def __post_init__(self):
        for row in self.rows:
            if np.any(row < 0) or abs(float(row.sum()) - 1.0) > POLICY_ROW_TOL:
                raise ValidationError("policy row is not a probability distribution")

    @staticmethod
    def uniform(mdp: Mdp) -> "Policy":
        return Policy(tuple(np.full(mdp.n_actions(s), 1.0 / mdp.n_actions(s))
                            for s in range(mdp.n_states)))

    def prob(self, s: int, a: int) -> float:
        return float(self.rows[s][a])


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    """Expected residence counts per (state, action), zero outside transient states."""

    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        for row in self.values:
            if np.any(row < 0):
                raise ValidationError("occupancy values must be nonnegative")

    @staticmethod
    def from_raw(rows: Sequence[np.ndarray]) -> "OccupancyMeasure":
        """Build from solver output, clamping round-off in [-1e-9, 0) to zero."""
        clean = []
        for row in rows:
            row = np.asarray(row, dtype=float)
            if np.any(row < -OCCUPANCY_CLAMP):
                worst = float(row.min())
                raise ValidationError(f"occupancy value {worst} below clamp tolerance")
            clean.append(np.maximum(row, 0.0))
        return OccupancyMeasure(tuple(clean))

    def nu(self) -> np.ndarray:
        """Per-state residence mass (sum over actions)."""
        return np.array([float(row.sum()) for row in self.values])

    def total(self) -> float:
        return float(sum(row.sum() for row in self.values))

    def restrict(self, keep: set[int]) -> "OccupancyMeasure":
        """Zero out every state not in ``keep``."""
        return OccupancyMeasure(tuple(
            row if s in keep else np.zeros_like(row)
            for s, row in enumerate(self.values)
        ))


@dataclass(frozen=True)
class PathSample:
    """One sampled trajectory: (state, action) steps, terminal state, truncation flag."""

    steps: tuple[tuple[int, int], ...]
    terminal: int
    truncated: bool


@dataclass(frozen=True, eq=False)
class ExtendedMdp:
    """Time-layered copy of a base MDP separating two behavioral phases.

    States are pairs (base state, layer) with layers 1..horizon+1. Layers
    below the final one advance by exactly one step per transition; the
    final layer is self-contained and copies the base dynamics, so it
    behaves like the original infinite-horizon process.
    """

    base: Mdp
    horizon: int
    mdp: Mdp

    def index_of(self, base_idx: int, layer: int) -> int:
        return (layer - 1) * self.base.n_states + base_idx

    def layer_of(self, idx: int) -> int:
        return idx // self.base.n_states + 1

    def base_of(self, idx: int) -> int:
        return idx % self.base.n_states

    def layer_states(self, layer: int) -> range:
        n = self.base.n_states
        return range((layer - 1) * n, layer * n)

    def lift_policy(self, policy: Policy) -> Policy:
        """Copy a base-state policy onto every layer."""
        if len(policy.rows) != self.base.n_states:
            raise ValidationError("policy does not match the base process")
        return Policy(tuple(policy.rows[self.base_of(i)]
                            for i in range(self.mdp.n_states)))

    def deception_phase_states(self) -> set[int]:
        """Layered states strictly before the switch to goal-directed behavior."""
        return {i for layer in range(1, self.horizon + 1) for i in self.layer_states(layer)}


def build_grid_mdp(width: int, height: int, obstacles, start, goals):
    """Construct the four-action grid world and its state partition.

    Cells are (col, row) with origin at the bottom-left. A move into a wall
    or an obstacle keeps the agent in place; obstacle cells are removed from
    the state space entirely. Goal cells are absorbing.

    ``start`` is a single cell or a mapping cell -> probability.
    """
    if width < 1 or height < 1:
        raise ValidationError("grid dimensions must be positive")
    obstacles = {tuple(c) for c in obstacles}

    def check_cell(cell, role):
        cell = tuple(cell)
        if not (0 <= cell[0] < width and 0 <= cell[1] < height):
            raise ValidationError(f"{role} cell {cell} is outside the grid")
        if cell in obstacles:
            raise ValidationError(f"{role} cell {cell} lies on an obstacle")
        return cell

    goal_cells = [check_cell(c, "goal") for c in goals]
    if len(set(goal_cells)) != len(goal_cells):
        raise ValidationError("duplicate goal cells")
    if isinstance(start, Mapping):
        start_dist = {check_cell(c, "start"): float(p) for c, p in start.items()}
    else:
        start_dist = {check_cell(start, "start"): 1.0}

    labels = tuple(
        (col, row)
        for row in range(height)
        for col in range(width)
        if (col, row) not in obstacles
    )
    index = {lab: i for i, lab in enumerate(labels)}
    goal_set = set(goal_cells)

    transitions = []
    for col, row in labels:
        if (col, row) in goal_set:
            self_row = (np.array([index[(col, row)]]), np.array([1.0]))
            transitions.append(tuple(self_row for _ in GRID_ACTIONS))
            continue
        rows = []
        for action in GRID_ACTIONS:
            dc, dr = _GRID_MOVES[action]
            target = (col + dc, row + dr)
            if not (0 <= target[0] < width and 0 <= target[1] < height):
                target = (col, row)
            elif target in obstacles:
                target = (col, row)
            rows.append((np.array([index[target]]), np.array([1.0])))
        transitions.append(tuple(rows))

    initial = np.zeros(len(labels))
    for cell, p in start_dist.items():
        initial[index[cell]] += p

    mdp = Mdp(
        labels=labels,
        actions=tuple(GRID_ACTIONS for _ in labels),
        transitions=tuple(transitions),
        initial=initial,
    )
    return mdp, partition_states(mdp, goal_cells)


def partition_states(mdp: Mdp, goals) -> StatePartition:
    """Split states into goals, dead states, and the transient remainder.

    Dead states are those with no positive-probability path to any goal,
    found by breadth-first search on reversed edges.
    """
    goal_idx = tuple(mdp.index_of(g) for g in goals)
    for g in goal_idx:
        if not mdp.is_absorbing(g):
            raise ValidationError(f"goal {mdp.labels[g]!r} is not absorbing")

    predecessors = [[] for _ in range(mdp.n_states)]
    for s in range(mdp.n_states):
        for targets, probs in mdp.transitions[s]:
            for t, p in zip(targets, probs):
                if p > 0 and t != s:
                    predecessors[t].append(s)

    reaches_goal = set(goal_idx)
    queue = deque(goal_idx)
    while queue:
        t = queue.popleft()
        for s in predecessors[t]:
            if s not in reaches_goal:
                reaches_goal.add(s)
                queue.append(s)

    goal_set = set(goal_idx)
    transient = tuple(s for s in range(mdp.n_states)
                      if s in reaches_goal and s not in goal_set)
    dead = frozenset(s for s in range(mdp.n_states) if s not in reaches_goal)
    return StatePartition(goals=goal_idx, dead=dead, transient=transient)


def build_extended_mdp(mdp: Mdp, horizon: int) -> ExtendedMdp:
    """Layer the state space over times 1..horizon+1 (see ExtendedMdp)."""
    if not isinstance(horizon, (int, np.integer)) or horizon < 1:
        raise ValidationError("horizon must be a positive integer")
    horizon = int(horizon)
    n = mdp.n_states
    labels = tuple(
        (mdp.labels[s], t) for t in range(1, horizon + 2) for s in range(n)
    )
    actions = tuple(mdp.actions[s % n] for s in range(n * (horizon + 1)))

    transitions = []
    for t in range(1, horizon + 2):
        shift = (t if t <= horizon else horizon) * n
        for s in range(n):
            rows = tuple(
                (targets + shift, probs)
                for targets, probs in mdp.transitions[s]
            )
            transitions.append(rows)

    initial = np.zeros(n * (horizon + 1))
    initial[:n] = mdp.initial
    flat = Mdp(labels=labels, actions=actions,
               transitions=tuple(transitions), initial=initial)
    return ExtendedMdp(base=mdp, horizon=horizon, mdp=flat)


def policy_from_occupancy(x: OccupancyMeasure, mdp: Mdp) -> Policy:
    """Normalize occupancy rows into a policy; uniform where residence is zero."""
    if len(x.values) != mdp.n_states:
        raise ValidationError("occupancy measure does not match the MDP")
    rows = []
    for s in range(mdp.n_states):
        row = x.values[s]
        mass = float(row.sum())
        if mass > NU_FLOOR:
            row = row / mass
            rows.append(row / row.sum())
        else:
            rows.append(np.full(mdp.n_actions(s), 1.0 / mdp.n_actions(s)))
    return Policy(tuple(rows))


def _markov_blocks(mdp: Mdp, policy: Policy, partition: StatePartition):
    """Dense transient-to-transient and transient-to-goal chain blocks under a policy."""
    transient = partition.transient
    pos = {s: i for i, s in enumerate(transient)}
    goal_pos = {g: j for j, g in enumerate(partition.goals)}
    n_r, k = len(transient), len(partition.goals)
    p_rr = np.zeros((n_r, n_r))
    p_rg = np.zeros((n_r, k))
    for i, s in enumerate(transient):
        for a in range(mdp.n_actions(s)):
            pa = policy.rows[s][a]
            if pa == 0.0:
                continue
            targets, probs = mdp.transitions[s][a]
            for t, p in zip(targets, probs):
                if t in pos:
                    p_rr[i, pos[t]] += pa * p
                elif t in goal_pos:
                    p_rg[i, goal_pos[t]] += pa * p
    return p_rr, p_rg, pos


def reach_probabilities(mdp: Mdp, policy: Policy, partition: StatePartition) -> np.ndarray:
    """Probability of eventually reaching each goal, ordered as partition.goals.

    Solves the absorption linear system for the Markov chain the policy
    induces; dead states absorb the remaining mass.
    """
    if len(policy.rows) != mdp.n_states:
        raise ValidationError("policy does not cover all states")
    p_rr, p_rg, pos = _markov_blocks(mdp, policy, partition)
    n_r = len(partition.transient)
    if n_r:
        try:
            h = np.linalg.solve(np.eye(n_r) - p_rr, p_rg)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"absorption system is singular: {exc}") from exc
        if not np.all(np.isfinite(h)):
            raise NumericalError("absorption system produced non-finite values")
        if h.min() < -1e-8 or h.max() > 1 + 1e-8:
            raise NumericalError("absorption probabilities escaped [0, 1]")
        alpha_r = mdp.initial[list(partition.transient)]
        reach = alpha_r @ np.clip(h, 0.0, 1.0)
    else:
        reach = np.zeros(len(partition.goals))
    for j, g in enumerate(partition.goals):
        reach[j] += mdp.initial[g]
    if reach.sum() > 1 + 1e-9:
        raise NumericalError("goal reach probabilities exceed total mass")
    return reach


def occupancy_from_policy(mdp: Mdp, policy: Policy, partition: StatePartition) -> OccupancyMeasure:
    """Expected visit counts induced by a policy (the flow-balance solution)."""
    p_rr, _, pos = _markov_blocks(mdp, policy, partition)
    n_r = len(partition.transient)
    values = [np.zeros(mdp.n_actions(s)) for s in range(mdp.n_states)]
    if n_r:
        alpha_r = mdp.initial[list(partition.transient)]
        try:
            nu = np.linalg.solve(np.eye(n_r) - p_rr.T, alpha_r)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"flow system is singular: {exc}") from exc
        if not np.all(np.isfinite(nu)) or nu.min() < -1e-8:
            raise NumericalError("policy does not induce a finite occupancy")
        nu = np.maximum(nu, 0.0)
        for s, i in pos.items():
            values[s] = nu[i] * policy.rows[s]
    return OccupancyMeasure.from_raw(values)


def expected_state_density(x: OccupancyMeasure, ext: ExtendedMdp) -> np.ndarray:
    """Residence time per base state: occupancy summed over layers and actions."""
    if len(x.values) != ext.mdp.n_states:
        raise ValidationError("occupancy measure does not match the layered MDP")
    density = np.zeros(ext.base.n_states)
    for idx, row in enumerate(x.values):
        density[ext.base_of(idx)] += float(row.sum())
    return density


def _sampling_tables(mdp: Mdp, policy: Policy):
    """Padded cumulative tables for vectorized rollouts."""
    n = mdp.n_states
    a_max = max(mdp.n_actions(s) for s in range(n))
    sup_max = max(len(tr[0]) for row in mdp.transitions for tr in row)
    pol_cum = np.ones((n, a_max))
    tgt = np.zeros((n, a_max, sup_max), dtype=np.int64)
    trans_cum = np.ones((n, a_max, sup_max))
    for s in range(n):
        k = mdp.n_actions(s)
        pol_cum[s, :k] = np.cumsum(policy.rows[s])
        pol_cum[s, k - 1:] = 1.0
        for a in range(k):
            targets, probs = mdp.transitions[s][a]
            m = len(targets)
            tgt[s, a, :m] = targets
            tgt[s, a, m:] = targets[-1]
            trans_cum[s, a, :m] = np.cumsum(probs)
            trans_cum[s, a, m - 1:] = 1.0
    absorbing = np.array([mdp.is_absorbing(s) for s in range(n)])
    return pol_cum, tgt, trans_cum, absorbing


def _batch_rollout(mdp: Mdp, policy: Policy, n: int, seed: int, horizon_cap: int):
    """Yield (path_ids, states, actions, next_states) for each simulated step.

    All paths start from the initial distribution and advance in lockstep;
    a path drops out once it hits an absorbing state or the horizon cap.
    Identical seeds give identical streams.
    """
    rng = np.random.default_rng(seed)
    pol_cum, tgt, trans_cum, absorbing = _sampling_tables(mdp, policy)
    states = rng.choice(mdp.n_states, size=n, p=mdp.initial)
    ids = np.arange(n)
    alive = ~absorbing[states]
    ids, states = ids[alive], states[alive]
    for _ in range(horizon_cap):
        if ids.size == 0:
            return
        u = rng.random(ids.size)
        acts = (u[:, None] > pol_cum[states]).sum(axis=1)
        u = rng.random(ids.size)
        nxt_slot = (u[:, None] > trans_cum[states, acts]).sum(axis=1)
        nxt = tgt[states, acts, nxt_slot]
        yield ids, states, acts, nxt
        alive = ~absorbing[nxt]
        ids, states = ids[alive], nxt[alive]


def default_horizon_cap(mdp: Mdp) -> int:
    """Cap used when callers do not bound path length explicitly."""
    return 50 * mdp.n_states


def sample_paths(mdp: Mdp, policy: Policy, n: int, seed: int,
                 horizon_cap: int | None = None) -> list[PathSample]:
    """Sample ``n`` independent paths from the initial distribution under ``policy``.

    Paths stop at absorbing states; paths still alive after ``horizon_cap``
    steps are returned with ``truncated=True``, never dropped.
    """
    if n < 1:
        raise ValidationError("need at least one path")
    if horizon_cap is None:
        horizon_cap = default_horizon_cap(mdp)
    if horizon_cap < 1:
        raise ValidationError("horizon cap must be positive")

    steps: list[list[tuple[int, int]]] = [[] for _ in range(n)]
    last_state = {}
    rng_probe = np.random.default_rng(seed)
    # Re-draw the initial states exactly as the rollout does so empty paths
    # (mass starting on absorbing states) still get a terminal state.
    init_states = rng_probe.choice(mdp.n_states, size=n, p=mdp.initial)
    for ids, states, acts, nxt in _batch_rollout(mdp, policy, n, seed, horizon_cap):
        for i, s, a, t in zip(ids, states, acts, nxt):
            steps[int(i)].append((int(s), int(a)))
            last_state[int(i)] = int(t)

    absorbing = np.array([mdp.is_absorbing(s) for s in range(mdp.n_states)])
    paths = []
    for i in range(n):
        terminal = last_state.get(i, int(init_states[i]))
        truncated = not absorbing[terminal] and len(steps[i]) >= horizon_cap
        paths.append(PathSample(steps=tuple(steps[i]), terminal=terminal,
                                truncated=truncated))
    return paths


def project_path(path: PathSample, ext: ExtendedMdp) -> PathSample:
    """Drop the layer component of a path sampled in the layered MDP."""
    return PathSample(
        steps=tuple((ext.base_of(s), a) for s, a in path.steps),
        terminal=ext.base_of(path.terminal),
        truncated=path.truncated,
    )
