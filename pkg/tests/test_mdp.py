import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import densityplan as dp
from densityplan.errors import ValidationError

from conftest import (GRID_GOALS, GRID_OBSTACLES, GRID_START, bfs_distances,
                      chain_mdp, fork_mdp, make_mdp, random_mdp)


class TestBuildGrid:
    def test_smallest_grid(self):
        mdp, partition = dp.build_grid_mdp(2, 1, [], (0, 0), [(1, 0)])
        assert mdp.n_states == 2
        s = mdp.index_of((0, 0))
        right = mdp.actions[s].index("right")
        targets, probs = mdp.transitions[s][right]
        assert list(targets) == [mdp.index_of((1, 0))] and probs[0] == 1.0

    def test_scenario_grid_state_count(self, grid10):
        mdp, partition = grid10
        assert mdp.n_states == 86  # 100 cells minus 14 obstacles
        assert len(partition.goals) == 3
        assert len(partition.transient) == 83

    def test_goal_on_obstacle_rejected(self):
        with pytest.raises(ValidationError, match=r"\(1, 2\)"):
            dp.build_grid_mdp(10, 10, GRID_OBSTACLES, GRID_START, [(1, 2)])

    def test_start_out_of_bounds_rejected(self):
        with pytest.raises(ValidationError, match=r"\(10, 0\)"):
            dp.build_grid_mdp(10, 10, [], (10, 0), [(0, 9)])

    def test_wall_bounce_keeps_agent_in_place(self):
        mdp, _ = dp.build_grid_mdp(2, 1, [], (0, 0), [(1, 0)])
        s = mdp.index_of((0, 0))
        up = mdp.actions[s].index("up")
        targets, probs = mdp.transitions[s][up]
        assert list(targets) == [s] and probs[0] == 1.0

    def test_goals_absorbing(self, grid10):
        mdp, partition = grid10
        for g in partition.goals:
            assert mdp.is_absorbing(g)


class TestPartition:
    def test_obstacle_free_grid_has_no_dead_states(self):
        _, partition = dp.build_grid_mdp(4, 4, [], (0, 0), [(3, 3)])
        assert partition.dead == frozenset()

    def test_isolated_self_loop_state_is_dead(self):
        labels = ["a", "trap", "g"]
        actions = {lab: ["x"] for lab in labels}
        trans = {("a", "x"): {"g": 1.0}, ("trap", "x"): {"trap": 1.0},
                 ("g", "x"): {"g": 1.0}}
        mdp = make_mdp(labels, actions, trans, {"a": 1.0})
        partition = dp.partition_states(mdp, ["g"])
        assert partition.dead == frozenset({mdp.index_of("trap")})
        assert partition.transient == (mdp.index_of("a"),)

    def test_scenario_grid_dead_set_empty_vs_bfs_oracle(self, grid10):
        mdp, partition = grid10
        # Oracle: BFS from each goal over reversed moves; on this grid the
        # reversed and forward move sets coincide.
        reachable = set()
        for goal in GRID_GOALS:
            reachable |= set(bfs_distances(10, 10, GRID_OBSTACLES, goal))
        assert {mdp.labels[s] for s in partition.transient} | set(GRID_GOALS) == reachable
        assert partition.dead == frozenset()

    def test_non_absorbing_goal_rejected(self):
        mdp, _ = chain_mdp(2)
        with pytest.raises(ValidationError, match="absorbing"):
            dp.partition_states(mdp, ["s1"])


class TestExtendedMdp:
    def test_two_state_base_horizon_one(self):
        mdp, _ = chain_mdp(1)  # states s0, g
        ext = dp.build_extended_mdp(mdp, 1)
        assert ext.mdp.n_states == 4
        # final-layer states loop in their own layer
        idx = ext.index_of(mdp.index_of("s0"), 2)
        targets, _ = ext.mdp.transitions[idx][0]
        assert ext.layer_of(int(targets[0])) == 2

    def test_final_layer_self_contained(self, grid_ext):
        ext = grid_ext
        for idx in ext.layer_states(ext.horizon + 1):
            for targets, _ in ext.mdp.transitions[idx]:
                assert all(ext.layer_of(int(t)) == ext.horizon + 1 for t in targets)

    def test_layer_counts_scenario(self, grid10):
        mdp, _ = grid10
        # 86-state base is close to the documented 100-state arithmetic:
        # (T + 1) * |S| layered states.
        ext = dp.build_extended_mdp(mdp, 5)
        assert ext.mdp.n_states == 6 * 86

    def test_hundred_state_base(self):
        mdp, _ = dp.build_grid_mdp(10, 10, [], (0, 0), [(9, 9)])
        assert mdp.n_states == 100
        assert dp.build_extended_mdp(mdp, 5).mdp.n_states == 600

    def test_initial_mass_in_first_layer(self, grid_ext):
        ext = grid_ext
        n = ext.base.n_states
        assert np.allclose(ext.mdp.initial[:n], ext.base.initial)
        assert np.all(ext.mdp.initial[n:] == 0)

    def test_bad_horizon_rejected(self):
        mdp, _ = chain_mdp(1)
        with pytest.raises(ValidationError):
            dp.build_extended_mdp(mdp, 0)


class TestPolicyFromOccupancy:
    def test_normalization(self):
        mdp, _ = fork_mdp()
        values = [np.zeros(mdp.n_actions(s)) for s in range(mdp.n_states)]
        values[mdp.index_of("s")] = np.array([3.0, 1.0])
        x = dp.OccupancyMeasure(tuple(values))
        policy = dp.policy_from_occupancy(x, mdp)
        assert np.allclose(policy.rows[mdp.index_of("s")], [0.75, 0.25])

    def test_zero_residence_goes_uniform(self, grid10):
        mdp, _ = grid10
        x = dp.OccupancyMeasure(tuple(np.zeros(mdp.n_actions(s))
                                      for s in range(mdp.n_states)))
        policy = dp.policy_from_occupancy(x, mdp)
        assert np.allclose(policy.rows[0], [0.25, 0.25, 0.25, 0.25])

    def test_negative_occupancy_rejected(self):
        with pytest.raises(ValidationError):
            dp.OccupancyMeasure.from_raw([np.array([-0.5, 1.0])])

    def test_tiny_negative_occupancy_clamped(self):
        x = dp.OccupancyMeasure.from_raw([np.array([-5e-10, 1.0])])
        assert x.values[0][0] == 0.0


class TestReachProbabilities:
    def test_deterministic_chain(self):
        mdp, partition = chain_mdp(3)
        policy = dp.Policy.uniform(mdp)
        assert np.allclose(dp.reach_probabilities(mdp, policy, partition), [1.0])

    def test_fair_fork(self):
        mdp, partition = fork_mdp()
        policy = dp.Policy.uniform(mdp)
        reach = dp.reach_probabilities(mdp, policy, partition)
        assert np.allclose(reach, [0.5, 0.5])

    def test_mass_conservation_with_dead_state(self):
        labels = ["a", "trap", "g"]
        actions = {"a": ["risk", "safe"], "trap": ["x"], "g": ["x"]}
        trans = {("a", "risk"): {"trap": 0.3, "g": 0.7},
                 ("a", "safe"): {"g": 1.0},
                 ("trap", "x"): {"trap": 1.0}, ("g", "x"): {"g": 1.0}}
        mdp = make_mdp(labels, actions, trans, {"a": 1.0})
        partition = dp.partition_states(mdp, ["g"])
        policy = dp.Policy((np.array([1.0, 0.0]), np.array([1.0]), np.array([1.0])))
        reach = dp.reach_probabilities(mdp, policy, partition)
        assert np.allclose(reach, [0.7])


class TestOccupancyPolicyRoundTrip:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10_000))
    def test_round_trip_on_random_mdps(self, seed):
        mdp, partition = random_mdp(seed)
        rng = np.random.default_rng(seed + 1)
        rows = tuple(rng.dirichlet(np.ones(mdp.n_actions(s)))
                     for s in range(mdp.n_states))
        policy = dp.Policy(rows)
        x = dp.occupancy_from_policy(mdp, policy, partition)
        recovered = dp.policy_from_occupancy(x, mdp)
        reinduced = dp.occupancy_from_policy(mdp, recovered, partition)
        for s in partition.transient:
            if x.values[s].sum() > 1e-6:
                assert np.allclose(reinduced.values[s], x.values[s], atol=1e-5)

    def test_reach_plus_dead_mass_is_one(self):
        mdp, partition = fork_mdp()
        policy = dp.Policy.uniform(mdp)
        reach = dp.reach_probabilities(mdp, policy, partition)
        assert abs(reach.sum() - 1.0) <= 1e-8


class TestExpectedStateDensity:
    def test_single_layered_state(self):
        mdp, _ = chain_mdp(1)
        ext = dp.build_extended_mdp(mdp, 1)
        values = [np.zeros(ext.mdp.n_actions(i)) for i in range(ext.mdp.n_states)]
        idx = ext.index_of(mdp.index_of("s0"), 2)
        values[idx] = np.array([0.7])
        density = dp.expected_state_density(dp.OccupancyMeasure(tuple(values)), ext)
        assert density[mdp.index_of("s0")] == pytest.approx(0.7)
        assert density.sum() == pytest.approx(0.7)

    def test_layers_add_up(self):
        mdp, _ = chain_mdp(1)
        ext = dp.build_extended_mdp(mdp, 1)
        values = [np.zeros(ext.mdp.n_actions(i)) for i in range(ext.mdp.n_states)]
        s0 = mdp.index_of("s0")
        values[ext.index_of(s0, 1)] = np.array([0.3])
        values[ext.index_of(s0, 2)] = np.array([0.2])
        density = dp.expected_state_density(dp.OccupancyMeasure(tuple(values)), ext)
        assert density[s0] == pytest.approx(0.5)


class TestSamplePaths:
    def test_deterministic_chain_paths(self):
        mdp, _ = chain_mdp(3)
        paths = dp.sample_paths(mdp, dp.Policy.uniform(mdp), n=5, seed=1)
        for path in paths:
            assert len(path.steps) == 3
            assert not path.truncated
            assert path.terminal == mdp.index_of("g")

    def test_seed_determinism(self, grid10):
        mdp, _ = grid10
        policy = dp.Policy.uniform(mdp)
        a = dp.sample_paths(mdp, policy, n=50, seed=42, horizon_cap=30)
        b = dp.sample_paths(mdp, policy, n=50, seed=42, horizon_cap=30)
        assert a == b

    def test_fair_split_binomial_bound(self):
        mdp, partition = fork_mdp()
        n = 100_000
        paths = dp.sample_paths(mdp, dp.Policy.uniform(mdp), n=n, seed=7)
        g1 = mdp.index_of("g1")
        frac = sum(p.terminal == g1 for p in paths) / n
        stderr = math.sqrt(0.25 / n)
        assert abs(frac - 0.5) <= 3 * stderr

    def test_truncation_flag(self):
        labels = ["s", "g"]
        actions = {"s": ["spin", "go"], "g": ["x"]}
        trans = {("s", "spin"): {"s": 1.0}, ("s", "go"): {"g": 1.0},
                 ("g", "x"): {"g": 1.0}}
        mdp = make_mdp(labels, actions, trans, {"s": 1.0})
        policy = dp.Policy((np.array([1.0, 0.0]), np.array([1.0])))
        paths = dp.sample_paths(mdp, policy, n=3, seed=0, horizon_cap=4)
        assert all(p.truncated and len(p.steps) == 4 for p in paths)

    @settings(max_examples=10, deadline=None)
    @given(st.integers(0, 1000))
    def test_layer_monotonicity_of_extended_paths(self, seed):
        mdp, _ = fork_mdp()
        ext = dp.build_extended_mdp(mdp, 3)
        policy = dp.Policy.uniform(ext.mdp)
        for path in dp.sample_paths(ext.mdp, policy, n=20, seed=seed, horizon_cap=10):
            layers = [ext.layer_of(s) for s, _ in path.steps] + [ext.layer_of(path.terminal)]
            for earlier, later in zip(layers, layers[1:]):
                assert later >= earlier
                if earlier < ext.horizon + 1:
                    assert later == earlier + 1

    def test_path_validity_under_sampling_policy(self):
        mdp, _ = fork_mdp()
        policy = dp.Policy((np.array([0.3, 0.7]), np.array([1.0]), np.array([1.0])))
        for path in dp.sample_paths(mdp, policy, n=200, seed=3):
            for (s, a), nxt in zip(path.steps,
                                   [s for s, _ in path.steps[1:]] + [path.terminal]):
                assert policy.rows[s][a] > 0
                assert mdp.transition_prob(s, a, nxt) > 0


def test_project_path_drops_layers():
    mdp, _ = fork_mdp()
    ext = dp.build_extended_mdp(mdp, 2)
    paths = dp.sample_paths(ext.mdp, dp.Policy.uniform(ext.mdp), n=5, seed=9)
    for path in paths:
        base = dp.project_path(path, ext)
        assert all(0 <= s < mdp.n_states for s, _ in base.steps)
        assert base.terminal < mdp.n_states
