import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vrpssr.baselines import random_policy
from vrpssr.env import (
    Action,
    CustomerStatus,
    EnvUsageError,
    admissible_actions,
    manhattan_time,
    reset,
    step,
    trace_record,
)
from vrpssr.instance_gen import Cell, InstanceConfig, sample_instance
from vrpssr.oracle import EnvMismatch, exhaustive_env_check
from vrpssr.verify import random_small_instance

from conftest import make_instance


@pytest.mark.parametrize("a, b, d", [((0, 0), (0, 0), 0), ((0, 0), (3, 4), 7), ((31, 31), (0, 0), 62)])
def test_manhattan_time(a, b, d):
    assert manhattan_time(Cell(*a), Cell(*b)) == d


def test_reset_default_instance():
    inst = sample_instance(InstanceConfig(), 0)
    state, obs = reset(inst)
    assert state.vehicle == Cell(16, 16)
    assert state.t == 0
    assert not state.terminal
    n0 = sum(1 for c in inst.customers if c.request_time == 0)
    assert state.num_active == n0
    assert state.num_potential == inst.num_customers - n0


def test_reset_zero_horizon_terminal():
    state, _ = reset(make_instance(horizon=0))
    assert state.terminal
    assert state.episode_return == 0
    with pytest.raises(EnvUsageError):
        step(state, Action.WAIT)


def test_three_initial_actives():
    inst = make_instance(customers=[(0, 0, 0), (4, 4, 0), (1, 3, 0), (3, 1, 5)])
    state, _ = reset(inst)
    assert state.num_active == 3
    assert state.status[3] == CustomerStatus.POTENTIAL


def test_move_directions():
    inst = make_instance(horizon=50)
    for a, expect in [(Action.UP, (2, 3)), (Action.DOWN, (2, 1)), (Action.LEFT, (1, 2)),
                      (Action.RIGHT, (3, 2)), (Action.WAIT, (2, 2))]:
        state, _ = reset(inst)
        step(state, a)
        assert (state.vehicle.x, state.vehicle.y) == expect
        assert state.t == 1


def test_serve_adjacent_active_customer():
    inst = make_instance(customers=[(3, 2, 0)])
    state, _ = reset(inst)
    res = step(state, Action.RIGHT)
    assert res.reward == 10
    assert res.served == 0
    assert state.status[0] == CustomerStatus.SERVED
    assert state.episode_return == 10


def test_wait_without_reveal_is_noop():
    inst = make_instance(customers=[(0, 0, 8)])
    state, _ = reset(inst)
    res = step(state, Action.WAIT)
    assert res.reward == 0 and res.newly_active == ()
    assert state.vehicle == Cell(2, 2) and state.t == 1


def test_customer_activating_under_waiting_vehicle_is_served():
    inst = make_instance(horizon=20, customers=[(3, 2, 3)])
    state, _ = reset(inst)
    step(state, Action.RIGHT)  # t=1, customer still potential
    assert state.status[0] == CustomerStatus.POTENTIAL
    step(state, Action.WAIT)  # t=2
    res = step(state, Action.WAIT)  # t=3: reveal then serve
    assert res.newly_active == (0,) and res.served == 0 and res.reward == 10


def test_serve_before_reveal_flag_delays_service():
    inst = make_instance(horizon=20, customers=[(3, 2, 1)])
    state, _ = reset(inst, reveal_before_serve=False)
    res = step(state, Action.RIGHT)
    assert res.reward == 0 and state.status[0] == CustomerStatus.ACTIVE
    res = step(state, Action.WAIT)
    assert res.reward == 10


def test_off_grid_move_acts_as_wait():
    inst = make_instance(depot=(0, 0), horizon=20)
    state, _ = reset(inst)
    res = step(state, Action.LEFT)
    assert state.vehicle == Cell(0, 0) and state.t == 1 and res.reward == 0


def test_termination_when_time_runs_out():
    # Remaining time equals distance home -> terminal.
    inst = make_instance(horizon=4)
    state, _ = reset(inst)
    step(state, Action.RIGHT)  # t=1, d=1, remaining 3
    assert not state.terminal
    step(state, Action.RIGHT)  # t=2, d=2, remaining 2
    assert state.terminal


def test_termination_boundary_matches_reference_on_5x5():
    # Every action sequence on a tight 5x5 instance, compared with the reference simulator.
    inst = make_instance(horizon=7, customers=[(4, 2, 0), (2, 4, 2), (0, 0, 1)])
    report = exhaustive_env_check(inst, memoize=False)
    assert report.leaves > 100


def test_admissible_actions_corners():
    inst = make_instance(width=32, height=32, depot=(16, 16), horizon=230)
    state, _ = reset(inst)
    state.vehicle = Cell(0, 0)
    assert admissible_actions(state) == {Action.UP, Action.RIGHT, Action.WAIT}
    state.vehicle = Cell(31, 0)
    assert admissible_actions(state) == {Action.UP, Action.LEFT, Action.WAIT}
    state.vehicle = Cell(5, 5)
    assert admissible_actions(state) == set(Action)


def test_admissible_actions_exclude_stranding_moves():
    inst = make_instance(horizon=3)
    state, _ = reset(inst)
    step(state, Action.RIGHT)  # t=1 at distance 1, remaining 2
    assert Action.RIGHT not in admissible_actions(state)
    assert Action.LEFT in admissible_actions(state)
    assert Action.WAIT in admissible_actions(state)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), policy_seed=st.integers(0, 10_000))
def test_episode_invariants(seed, policy_seed):
    cfg = InstanceConfig(width=8, height=8, horizon=30, depot=Cell(4, 4),
                         cluster_centers=(Cell(2, 2), Cell(5, 6)), cluster_weights=(0.5, 0.5),
                         initial_mean=3, ongoing_mean_total=5)
    inst = sample_instance(cfg, seed)
    state, _ = reset(inst)
    rng = np.random.default_rng(policy_seed)
    prev_status = state.status.copy()
    steps = 0
    while not state.terminal:
        t0 = state.t
        res = step(state, random_policy(state, rng))
        steps += 1
        assert res.reward in (0.0, 10.0)
        assert state.t == t0 + 1 and state.t <= cfg.horizon
        assert np.all(state.status >= prev_status)
        prev_status = state.status.copy()
        assert state.episode_return == 10 * state.num_served
    assert steps <= cfg.horizon
    assert manhattan_time(state.vehicle, cfg.depot) <= cfg.horizon - state.t


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_env_matches_reference_on_small_instances(seed):
    rng = np.random.default_rng(seed)
    inst = random_small_instance(rng, int(rng.integers(2, 5)), int(rng.integers(2, 5)),
                                 int(rng.integers(0, 9)), int(rng.integers(0, 4)))
    exhaustive_env_check(inst)


def test_mutated_phase_order_is_caught():
    # Serving before revealing must diverge from the reference simulator.
    inst = make_instance(width=3, height=3, depot=(1, 1), horizon=6, customers=[(2, 1, 1)])
    with pytest.raises(EnvMismatch) as e:
        exhaustive_env_check(inst, reveal_before_serve=False)
    assert e.value.trace


def test_exhaustive_check_3x3_single_customer():
    inst = make_instance(width=3, height=3, depot=(1, 1), horizon=6, customers=[(0, 2, 2)])
    report = exhaustive_env_check(inst, memoize=False)
    assert report.best_return == 10


def test_trace_record_is_json():
    inst = make_instance(customers=[(3, 2, 0)])
    state, _ = reset(inst)
    res = step(state, Action.RIGHT)
    rec = trace_record(state, Action.RIGHT, res)
    assert json.loads(json.dumps(rec)) == {
        "t": 1, "vehicle": [3, 2], "action": "RIGHT", "reward": 10.0,
        "newly_active": [], "served": 0, "terminal": False,
    }
