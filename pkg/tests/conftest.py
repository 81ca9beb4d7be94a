"""Shared fixtures: the 10x10 scenario geometry and small hand-built MDPs."""
from __future__ import annotations

import numpy as np
import pytest

import densityplan as dp

GRID_OBSTACLES = [
    (1, 2), (2, 2), (1, 3), (2, 3),
    (6, 3), (7, 3), (6, 4), (7, 4),
    (3, 6), (4, 6), (5, 6), (3, 7), (4, 7), (5, 7),
]
GRID_START = (2, 0)
GRID_GOALS = [(0, 9), (4, 9), (9, 9)]
U1 = np.array([[0.0, 0.0, 6.0], [0.0, 2.0, 0.0], [-1.0, 0.0, 0.0]])
U2 = np.array([[0.0, 0.0, -1.0], [0.0, 2.0, 0.0], [6.0, 0.0, 0.0]])


def make_mdp(labels, actions, trans, initial):
    """Build an Mdp from {(state, action): {target: prob}} dictionaries."""
    index = {lab: i for i, lab in enumerate(labels)}
    rows = []
    for s in labels:
        per_state = []
        for a in actions[s]:
            dist = trans[(s, a)]
            targets = np.array([index[t] for t in dist], dtype=np.int64)
            probs = np.array([float(p) for p in dist.values()])
            per_state.append((targets, probs))
        rows.append(tuple(per_state))
    init = np.zeros(len(labels))
    for lab, p in initial.items():
        init[index[lab]] = p
    return dp.Mdp(labels=tuple(labels),
                  actions=tuple(tuple(actions[s]) for s in labels),
                  transitions=tuple(rows), initial=init)


def stay_mdp(stay=0.5):
    """One transient state with two half-stay actions feeding two goals.

    Residence times are policy-independent, which pins oracle values for
    the synthesis tests.
    """
    labels = ["s0", "g1", "g2"]
    actions = {"s0": ["a1", "a2"], "g1": ["stay"], "g2": ["stay"]}
    trans = {
        ("s0", "a1"): {"s0": stay, "g1": 1 - stay},
        ("s0", "a2"): {"s0": stay, "g2": 1 - stay},
        ("g1", "stay"): {"g1": 1.0},
        ("g2", "stay"): {"g2": 1.0},
    }
    mdp = make_mdp(labels, actions, trans, {"s0": 1.0})
    return mdp, dp.partition_states(mdp, ["g1", "g2"])


def chain_mdp(length=3):
    """Deterministic chain s0 -> s1 -> ... -> goal."""
    labels = [f"s{i}" for i in range(length)] + ["g"]
    actions = {lab: ["go"] for lab in labels}
    trans = {(f"s{i}", "go"): {labels[i + 1]: 1.0} for i in range(length)}
    trans[("g", "go")] = {"g": 1.0}
    mdp = make_mdp(labels, actions, trans, {"s0": 1.0})
    return mdp, dp.partition_states(mdp, ["g"])


def fork_mdp():
    """One state, two actions, each leading deterministically to its own goal."""
    labels = ["s", "g1", "g2"]
    actions = {"s": ["left", "right"], "g1": ["stay"], "g2": ["stay"]}
    trans = {
        ("s", "left"): {"g1": 1.0},
        ("s", "right"): {"g2": 1.0},
        ("g1", "stay"): {"g1": 1.0},
        ("g2", "stay"): {"g2": 1.0},
    }
    mdp = make_mdp(labels, actions, trans, {"s": 1.0})
    return mdp, dp.partition_states(mdp, ["g1", "g2"])


def random_mdp(seed, n_states=4, n_actions=2, n_goals=1):
    """Random absorbing MDP with every state able to reach a goal."""
    rng = np.random.default_rng(seed)
    labels = [f"s{i}" for i in range(n_states)] + [f"g{j}" for j in range(n_goals)]
    goal_labels = labels[n_states:]
    actions = {lab: [f"a{k}" for k in range(n_actions)] for lab in labels[:n_states]}
    actions.update({g: ["stay"] for g in goal_labels})
    trans = {}
    for i in range(n_states):
        for k in range(n_actions):
            support = rng.choice(len(labels), size=min(3, len(labels)), replace=False)
            # force positive absorption chance from the last state
            if i == n_states - 1 and k == 0:
                support[0] = n_states
            probs = rng.dirichlet(np.ones(len(support)))
            dist = {}
            for s2, p in zip(support, probs):
                dist[labels[s2]] = dist.get(labels[s2], 0.0) + float(p)
            trans[(labels[i], f"a{k}")] = dist
    for g in goal_labels:
        trans[(g, "stay")] = {g: 1.0}
    init = rng.dirichlet(np.ones(n_states))
    mdp = make_mdp(labels, actions, trans, {labels[i]: float(p) for i, p in enumerate(init)})
    return mdp, dp.partition_states(mdp, goal_labels)


@pytest.fixture(scope="session")
def grid10():
    return dp.build_grid_mdp(10, 10, GRID_OBSTACLES, GRID_START, GRID_GOALS)


@pytest.fixture(scope="session")
def sigma_true():
    return dp.AllocationStrategy(np.array([0.5, 0.5, 0.0]))


@pytest.fixture(scope="session")
def sigma_decoy():
    return dp.AllocationStrategy(np.array([0.0, 0.5, 0.5]))


@pytest.fixture(scope="session")
def grid_predictions(grid10, sigma_true, sigma_decoy):
    """Predicted policies for (beta, target) pairs, solved once per session."""
    mdp, partition = grid10
    cache = {}
    for beta in (1.0, 6.0):
        for name, target in (("true", sigma_true), ("decoy", sigma_decoy)):
            spec = dp.PredictionSpec(mdp=mdp, partition=partition, target=target,
                                     cost=10.0, beta=beta)
            cache[(beta, name)] = dp.predict_policy(spec)
    return cache


@pytest.fixture(scope="session")
def grid_ext(grid10):
    mdp, _ = grid10
    return dp.build_extended_mdp(mdp, 5)


@pytest.fixture(scope="session")
def grid_ext_partition(grid10, grid_ext):
    mdp, partition = grid10
    goals = [(mdp.labels[g], grid_ext.horizon + 1) for g in partition.goals]
    return dp.partition_states(grid_ext.mdp, goals)


def kl_identity_cases():
    """Three fixed small MDPs with full-support policy pairs.

    Every recurrent class is a single absorbing state, so paths terminate
    almost surely and the occupancy-weighted log-ratio identity applies
    without truncation effects.
    """
    cases = []

    mdp, partition = fork_mdp()
    pi = dp.Policy((np.array([0.7, 0.3]), np.array([1.0]), np.array([1.0])))
    pi_bar = dp.Policy((np.array([0.5, 0.5]), np.array([1.0]), np.array([1.0])))
    cases.append((mdp, partition, pi, pi_bar))

    mdp, partition = stay_mdp()
    pi = dp.Policy((np.array([0.85, 0.15]), np.array([1.0]), np.array([1.0])))
    pi_bar = dp.Policy((np.array([0.4, 0.6]), np.array([1.0]), np.array([1.0])))
    cases.append((mdp, partition, pi, pi_bar))

    labels = ["s0", "s1", "s2", "s3", "g1", "g2"]
    actions = {s: ["a0", "a1"] for s in ("s0", "s1", "s2", "s3")}
    actions.update({"g1": ["stay"], "g2": ["stay"]})
    trans = {
        ("s0", "a0"): {"s1": 0.6, "s2": 0.4},
        ("s0", "a1"): {"s0": 0.5, "s1": 0.5},
        ("s1", "a0"): {"g1": 0.7, "s2": 0.3},
        ("s1", "a1"): {"s2": 1.0},
        ("s2", "a0"): {"g2": 0.5, "s0": 0.5},
        ("s2", "a1"): {"s3": 0.8, "g2": 0.2},
        ("s3", "a0"): {"g1": 1.0},
        ("s3", "a1"): {"g2": 0.5, "s0": 0.5},
        ("g1", "stay"): {"g1": 1.0},
        ("g2", "stay"): {"g2": 1.0},
    }
    mdp = make_mdp(labels, actions, trans, {"s0": 0.8, "s1": 0.2})
    partition = dp.partition_states(mdp, ["g1", "g2"])
    pi = dp.Policy((np.array([0.6, 0.4]), np.array([0.5, 0.5]),
                    np.array([0.7, 0.3]), np.array([0.9, 0.1]),
                    np.array([1.0]), np.array([1.0])))
    pi_bar = dp.Policy((np.array([0.3, 0.7]), np.array([0.8, 0.2]),
                        np.array([0.4, 0.6]), np.array([0.5, 0.5]),
                        np.array([1.0]), np.array([1.0])))
    cases.append((mdp, partition, pi, pi_bar))
    return cases


def bfs_distances(width, height, obstacles, source):
    """Independent breadth-first-search oracle over grid cells."""
    from collections import deque
    obstacles = set(obstacles)
    dist = {source: 0}
    queue = deque([source])
    while queue:
        col, row = queue.popleft()
        for dc, dr in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            nxt = (col + dc, row + dr)
            if (0 <= nxt[0] < width and 0 <= nxt[1] < height
                    and nxt not in obstacles and nxt not in dist):
                dist[nxt] = dist[(col, row)] + 1
                queue.append(nxt)
    return dist
