"""Reference policies and a plain episode runner."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .env import Action, CustomerStatus, EnvState, admissible_mask, manhattan_time, reset, step
from .instance_gen import Cell, Instance


class PolicyKind(str, Enum):
    RANDOM = "random"
    GREEDY = "greedy"


def step_toward(src: Cell, dst: Cell) -> Action:
    """One move shrinking the larger axis gap; horizontal wins ties."""
    dx, dy = dst.x - src.x, dst.y - src.y
    if dx == 0 and dy == 0:
        return Action.WAIT
    if abs(dx) >= abs(dy):
        return Action.RIGHT if dx > 0 else Action.LEFT
    return Action.UP if dy > 0 else Action.DOWN


def greedy_target(state: EnvState) -> Cell | None:
    lay = state.layout
    remaining = lay.horizon - state.t
    v = state.vehicle
    best, best_d = None, None
    for cid in np.flatnonzero(state.status == CustomerStatus.ACTIVE):
        c = state.instance.customers[cid].cell
        d = manhattan_time(v, c)
        if d + manhattan_time(c, lay.depot) > remaining:
            continue
        if best_d is None or d < best_d:
            best, best_d = c, d
    return best


def greedy_policy(state: EnvState, rng=None) -> Action:
    """Chase the nearest active customer that still leaves time to get home;
    otherwise head for the depot and wait there."""
    target = greedy_target(state)
    if target is None:
        target = state.layout.depot
    return step_toward(state.vehicle, target)


def random_policy(state: EnvState, rng: np.random.Generator) -> Action:
    choices = np.flatnonzero(admissible_mask(state))
    return Action(int(rng.choice(choices)))


POLICIES: dict[str, Callable] = {
    PolicyKind.RANDOM.value: random_policy,
    PolicyKind.GREEDY.value: greedy_policy,
}


@dataclass
class EpisodeResult:
    episode_return: float
    served: int
    steps: int
    total_customers: int


def run_episode(instance: Instance, policy: Callable, rng: np.random.Generator,
                on_step: Callable | None = None) -> EpisodeResult:
    """Roll out ``policy(state, rng)`` until termination.

    ``on_step(state, action, result)`` is called after every step.
    """
    state, _ = reset(instance, observe=False)
    steps = 0
    while not state.terminal:
        action = policy(state, rng)
        result = step(state, action, observe=False)
        steps += 1
        if on_step is not None:
            on_step(state, action, result)
    return EpisodeResult(state.episode_return, state.num_served, steps, instance.num_customers)
