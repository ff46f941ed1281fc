"""The VRPSSR decision process on the Manhattan grid.

One call to :func:`step` runs these phases in order:

1. move one cell (or stay, on ``WAIT`` or on a move that would leave the grid),
2. advance the clock (one minute per edge, ``wait_time`` minutes for waiting),
3. reveal every potential customer whose request minute has been reached,
4. serve the customer under the vehicle if it is active,
5. terminate once the remaining time is no larger than the way back to the depot.

Setting ``reveal_before_serve=False`` swaps phases 3 and 4, so a customer that
activates on the arrival minute is only servable on a later step.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import IO

import numpy as np

from .instance_gen import Cell, Instance


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3
    WAIT = 4


NUM_ACTIONS = len(Action)
MOVES = {
    Action.UP: (0, 1),
    Action.DOWN: (0, -1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
    Action.WAIT: (0, 0),
}


class CustomerStatus(IntEnum):
    POTENTIAL = 0
    ACTIVE = 1
    SERVED = 2


class EnvUsageError(RuntimeError):
    pass


def manhattan_time(a: Cell, b: Cell) -> int:
    return abs(a.x - b.x) + abs(a.y - b.y)


class _Layout:
    """Per-instance lookup tables shared by every state of an episode."""

    def __init__(self, instance: Instance):
        cfg = instance.config
        self.width = cfg.width
        self.height = cfg.height
        self.horizon = cfg.horizon
        self.depot = cfg.depot
        self.reward = float(cfg.reward_per_customer)
        self.wait_time = int(cfg.wait_time)
        self.cell_to_customer = {c.cell: c.id for c in instance.customers}
        self.reveals: dict[int, list[int]] = {}
        for c in instance.customers:
            self.reveals.setdefault(c.request_time, []).append(c.id)
        self.xs = np.array([c.cell.x for c in instance.customers], dtype=np.intp)
        self.ys = np.array([c.cell.y for c in instance.customers], dtype=np.intp)


@dataclass
class EnvState:
    instance: Instance
    vehicle: Cell
    t: int
    status: np.ndarray
    terminal: bool = False
    episode_return: float = 0.0
    reveal_before_serve: bool = True
    layout: _Layout = field(default=None, repr=False, compare=False)

    def copy(self) -> "EnvState":
        return EnvState(
            instance=self.instance,
            vehicle=self.vehicle,
            t=self.t,
            status=self.status.copy(),
            terminal=self.terminal,
            episode_return=self.episode_return,
            reveal_before_serve=self.reveal_before_serve,
            layout=self.layout,
        )

    @property
    def time_left(self) -> int:
        return self.layout.horizon - self.t

    @property
    def num_served(self) -> int:
        return int(np.count_nonzero(self.status == CustomerStatus.SERVED))

    @property
    def num_active(self) -> int:
        return int(np.count_nonzero(self.status == CustomerStatus.ACTIVE))

    @property
    def num_potential(self) -> int:
        return int(np.count_nonzero(self.status == CustomerStatus.POTENTIAL))

    def key(self) -> tuple:
        return (self.t, self.vehicle.x, self.vehicle.y, self.terminal, self.status.tobytes())


@dataclass
class StepResult:
    reward: float
    terminal: bool
    observation: object = None
    newly_active: tuple[int, ...] = ()
    served: int | None = None


def _check_terminal(state: EnvState) -> bool:
    lay = state.layout
    return lay.horizon - state.t <= manhattan_time(state.vehicle, lay.depot)


def reset(instance: Instance, reveal_before_serve: bool = True, observe: bool = True):
    """Start an episode: vehicle at the depot, clock at 0, t=0 requests active.

    Returns ``(state, observation)``; the observation is ``None`` when
    ``observe`` is false.
    """
    lay = _Layout(instance)
    status = np.zeros(len(instance.customers), dtype=np.int8)
    for cid in lay.reveals.get(0, ()):
        status[cid] = CustomerStatus.ACTIVE
    state = EnvState(
        instance=instance,
        vehicle=lay.depot,
        t=0,
        status=status,
        reveal_before_serve=reveal_before_serve,
        layout=lay,
    )
    state.terminal = _check_terminal(state)
    obs = None
    if observe:
        from .observation import feature_layers

        obs = feature_layers(state)
    return state, obs


def _target_cell(state: EnvState, action: Action) -> Cell:
    dx, dy = MOVES[action]
    x, y = state.vehicle.x + dx, state.vehicle.y + dy
    lay = state.layout
    if 0 <= x < lay.width and 0 <= y < lay.height:
        return Cell(x, y)
    return state.vehicle


def _reveal(state: EnvState, t_from: int, t_to: int) -> list[int]:
    out = []
    status = state.status
    for minute in range(t_from + 1, t_to + 1):
        for cid in state.layout.reveals.get(minute, ()):
            if status[cid] == CustomerStatus.POTENTIAL:
                status[cid] = CustomerStatus.ACTIVE
                out.append(cid)
    return out


def _serve(state: EnvState) -> int | None:
    cid = state.layout.cell_to_customer.get(state.vehicle)
    if cid is not None and state.status[cid] == CustomerStatus.ACTIVE:
        state.status[cid] = CustomerStatus.SERVED
        return cid
    return None


def step(state: EnvState, action: Action | int, observe: bool = True) -> StepResult:
    """Advance ``state`` in place by one decision."""
    if state.terminal:
        raise EnvUsageError("step() called on a terminal state; call reset()")
    action = Action(action)
    lay = state.layout
    new_cell = _target_cell(state, action)
    moved = new_cell != state.vehicle
    t_prev = state.t
    state.vehicle = new_cell
    state.t = t_prev + (1 if moved else lay.wait_time)

    if state.reveal_before_serve:
        revealed = _reveal(state, t_prev, state.t)
        served = _serve(state)
    else:
        served = _serve(state)
        revealed = _reveal(state, t_prev, state.t)

    reward = lay.reward if served is not None else 0.0
    state.episode_return += reward
    state.terminal = _check_terminal(state)
    obs = None
    if observe:
        from .observation import feature_layers

        obs = feature_layers(state)
    return StepResult(
        reward=reward,
        terminal=state.terminal,
        observation=obs,
        newly_active=tuple(revealed),
        served=served,
    )


def admissible_mask(state: EnvState) -> np.ndarray:
    """Boolean mask over the five actions.

    A move is admissible when it stays on the grid and still leaves enough time
    to get back to the depot from the cell it reaches.  ``WAIT`` is always
    admissible from a nonterminal state.
    """
    lay = state.layout
    mask = np.zeros(NUM_ACTIONS, dtype=bool)
    mask[Action.WAIT] = True
    remaining_after = lay.horizon - (state.t + 1)
    vx, vy = state.vehicle.x, state.vehicle.y
    for a in (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT):
        dx, dy = MOVES[a]
        x, y = vx + dx, vy + dy
        if not (0 <= x < lay.width and 0 <= y < lay.height):
            continue
        if abs(x - lay.depot.x) + abs(y - lay.depot.y) <= remaining_after:
            mask[a] = True
    return mask


def admissible_actions(state: EnvState) -> set[Action]:
    if state.terminal:
        raise EnvUsageError("no admissible actions in a terminal state")
    return {Action(i) for i in np.flatnonzero(admissible_mask(state))}


def trace_record(state: EnvState, action: Action | int, result: StepResult) -> dict:
    """One JSON-lines record describing the step that produced ``state``."""
    return {
        "t": state.t,
        "vehicle": [state.vehicle.x, state.vehicle.y],
        "action": Action(action).name,
        "reward": result.reward,
        "newly_active": list(result.newly_active),
        "served": result.served,
        "terminal": result.terminal,
    }


def write_trace_line(fh: IO[str], record: dict) -> None:
    fh.write(json.dumps(record) + "\n")
