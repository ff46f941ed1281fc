import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrpssr.baselines import greedy_policy, random_policy, run_episode, step_toward
from vrpssr.env import Action, admissible_mask, reset, step
from vrpssr.instance_gen import Cell, InstanceConfig, sample_instance
from vrpssr.oracle import (
    OracleSizeError,
    brute_force_optimal,
    exhaustive_env_check,
    offline_optimal,
    order_enumeration_optimal,
)
from vrpssr.verify import random_small_instance

from conftest import make_instance


@pytest.mark.parametrize("src, dst, a", [
    ((0, 0), (0, 0), Action.WAIT),
    ((0, 0), (3, 1), Action.RIGHT),
    ((0, 0), (1, 3), Action.UP),
    ((2, 2), (0, 0), Action.LEFT),
    ((2, 2), (2, 0), Action.DOWN),
])
def test_step_toward(src, dst, a):
    assert step_toward(Cell(*src), Cell(*dst)) == a


def test_greedy_chases_nearest_active():
    state, _ = reset(make_instance(customers=[(4, 2, 0), (2, 3, 0)]))
    assert greedy_policy(state) == Action.UP


def test_greedy_skips_unreachable_and_goes_home():
    inst = make_instance(horizon=6, customers=[(4, 4, 0)])  # 4 out + 4 back > 6
    state, _ = reset(inst)
    assert greedy_policy(state) == Action.WAIT


def test_greedy_serves_everything_on_easy_instance():
    inst = make_instance(horizon=30, customers=[(0, 0, 0), (4, 4, 0), (0, 4, 3)])
    assert run_episode(inst, greedy_policy, np.random.default_rng(0)).episode_return == 30


def test_random_policy_uniform_over_admissible():
    state, _ = reset(make_instance(depot=(0, 0), horizon=20))
    rng = np.random.default_rng(0)
    counts = np.bincount([random_policy(state, rng) for _ in range(3000)], minlength=5)
    assert counts[Action.DOWN] == counts[Action.LEFT] == 0
    assert all(abs(counts[a] / 3000 - 1 / 3) < 0.03 for a in (Action.UP, Action.RIGHT, Action.WAIT))


def test_policies_stay_admissible():
    inst = sample_instance(InstanceConfig(), 3)
    for policy in (greedy_policy, random_policy):
        rng = np.random.default_rng(1)
        state, _ = reset(inst, observe=False)
        while not state.terminal:
            a = policy(state, rng)
            assert admissible_mask(state)[a]
            step(state, a, observe=False)


def test_offline_optimal_examples():
    assert offline_optimal(make_instance()) == 0
    # Adjacent initial customer.
    assert offline_optimal(make_instance(customers=[(3, 2, 0)])) == 10
    # Customer too far to reach and return.
    assert offline_optimal(make_instance(horizon=4, customers=[(4, 4, 0)])) == 0
    # Late customer: must be at (4,2) at or after t=8, and home by t=10.
    assert offline_optimal(make_instance(horizon=10, customers=[(4, 2, 8)])) == 10
    assert offline_optimal(make_instance(horizon=10, customers=[(4, 2, 9)])) == 0


def test_offline_optimal_picks_better_side():
    inst = make_instance(width=5, height=2, depot=(2, 0), horizon=6,
                         customers=[(0, 0, 0), (4, 0, 0), (3, 0, 0)])
    assert offline_optimal(inst) == 20


def test_offline_bound_dominates_online_policies():
    rng = np.random.default_rng(7)
    for _ in range(30):
        inst = random_small_instance(rng, 5, 5, 14, 5)
        bound = offline_optimal(inst)
        for policy in (greedy_policy, random_policy):
            assert run_episode(inst, policy, rng).episode_return <= bound


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_three_optimum_routes_agree(seed):
    rng = np.random.default_rng(seed)
    inst = random_small_instance(rng, int(rng.integers(2, 4)), int(rng.integers(2, 4)),
                                 int(rng.integers(0, 8)), int(rng.integers(0, 4)))
    dp = offline_optimal(inst)
    assert dp == order_enumeration_optimal(inst)
    assert dp == brute_force_optimal(inst)


def test_exhaustive_check_reports_tree():
    inst = make_instance(width=3, height=3, depot=(1, 1), horizon=5, customers=[(0, 0, 0), (2, 2, 2)])
    rep = exhaustive_env_check(inst, memoize=False)
    memo = exhaustive_env_check(inst)
    assert rep.leaves > 0 and rep.nodes >= rep.leaves
    assert rep.best_return == memo.best_return == offline_optimal(inst)


def test_size_guards():
    big = sample_instance(InstanceConfig(), 0)
    with pytest.raises(OracleSizeError):
        offline_optimal(big)
    many = make_instance(width=5, height=5, horizon=20,
                         customers=[(x, y, 0) for x in range(5) for y in range(2)])
    with pytest.raises(OracleSizeError):
        order_enumeration_optimal(many)


def test_baseline_ordering_on_small_instances():
    cfg = InstanceConfig(width=8, height=8, horizon=40, depot=Cell(4, 4),
                         cluster_centers=(Cell(2, 5), Cell(5, 2)), cluster_weights=(0.5, 0.5),
                         initial_mean=4.0, ongoing_mean_total=4.0)
    rng = np.random.default_rng(0)
    rand, greedy, opt = [], [], []
    for s in range(40):
        inst = sample_instance(cfg, s)
        rand.append(run_episode(inst, random_policy, rng).episode_return)
        greedy.append(run_episode(inst, greedy_policy, rng).episode_return)
        if inst.num_customers <= 10:
            opt.append((s, offline_optimal(inst, max_horizon=40)))
    assert np.mean(rand) < np.mean(greedy)
    for s, bound in opt:
        assert greedy[s] <= bound
