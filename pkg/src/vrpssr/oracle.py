"""Exact checks on small instances.

* :func:`offline_optimal` -- backward induction over (minute, cell, served set)
  with every request time known in advance.  This bounds any policy that only
  sees requests as they appear.
* :func:`order_enumeration_optimal` -- an independent route for the same
  number: enumerate customer visiting orders and test each for a feasible
  schedule in closed form.
* :func:`exhaustive_env_check` -- drive the environment and a separately
  written simulator through every admissible action sequence and compare them
  after each step.

All of these assume one minute per wait and that only admissible actions (see
:func:`vrpssr.env.admissible_mask`) are played.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import Action, CustomerStatus, admissible_mask, reset, step
from .instance_gen import Instance


class OracleSizeError(ValueError):
    pass


class EnvMismatch(AssertionError):
    """The environment and the reference simulator disagree.

    ``trace`` holds the action prefix leading to the first divergence.
    """

    def __init__(self, message: str, trace: list[str], env_view: dict, ref_view: dict):
        super().__init__(
            f"{message} after actions {trace}\n  env: {env_view}\n  ref: {ref_view}"
        )
        self.trace = trace
        self.env_view = env_view
        self.ref_view = ref_view


def _require_unit_wait(instance: Instance) -> None:
    if instance.config.wait_time != 1:
        raise OracleSizeError("oracles assume wait_time == 1")


def offline_optimal(instance: Instance, max_cells: int = 64, max_horizon: int = 24,
                    max_customers: int = 10) -> float:
    """Best achievable episode return with full foreknowledge of requests."""
    cfg = instance.config
    n = instance.num_customers
    C = cfg.width * cfg.height
    if C > max_cells or cfg.horizon > max_horizon or n > max_customers:
        raise OracleSizeError(
            f"instance too large for the oracle: {cfg.width}x{cfg.height} grid, "
            f"T={cfg.horizon}, {n} customers (limits {max_cells} cells, T<={max_horizon}, "
            f"{max_customers} customers)"
        )
    _require_unit_wait(instance)
    T = cfg.horizon
    W, H = cfg.width, cfg.height
    dep = cfg.depot
    reward = float(cfg.reward_per_customer)
    if T <= 0:
        return 0.0

    M = 1 << n
    xs = np.arange(C) % W
    ys = np.arange(C) // W
    dist_home = np.abs(xs - dep.x) + np.abs(ys - dep.y)

    cust_at = np.full(C, -1, dtype=np.int64)
    rt = np.zeros(max(n, 1), dtype=np.int64)
    for c in instance.customers:
        cust_at[c.cell.y * W + c.cell.x] = c.id
        rt[c.id] = c.request_time

    moves = []
    for a in (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT, Action.WAIT):
        dx, dy = {Action.UP: (0, 1), Action.DOWN: (0, -1), Action.LEFT: (-1, 0),
                  Action.RIGHT: (1, 0), Action.WAIT: (0, 0)}[a]
        nx, ny = xs + dx, ys + dy
        ok = (nx >= 0) & (nx < W) & (ny >= 0) & (ny < H)
        dest = np.where(ok, ny * W + nx, -1)
        moves.append((a, dest))

    masks = np.arange(M, dtype=np.int64)
    has_cust = cust_at >= 0
    bit = np.where(has_cust, np.left_shift(1, np.maximum(cust_at, 0)), 0)
    unserved = (masks[None, :] & bit[:, None]) == 0  # (C, M)

    v_next = np.zeros((C, M))  # value at minute t+1
    for t in range(T - 1, -1, -1):
        t1 = t + 1
        terminal_next = (T - t1) <= dist_home
        active = has_cust & (rt[np.maximum(cust_at, 0)] <= t1)
        gain = active[:, None] & unserved  # (C, M)
        new_mask = np.where(gain, masks[None, :] | bit[:, None], masks[None, :])
        cont = np.where(terminal_next[:, None], 0.0, np.take_along_axis(v_next, new_mask, axis=1))
        arrive_value = gain * reward + cont  # (C, M) value of arriving at a cell at t+1

        v_t = np.full((C, M), -np.inf)
        for a, dest in moves:
            if a == Action.WAIT:
                allowed = np.ones(C, dtype=bool)
                d = np.arange(C)
            else:
                allowed = dest >= 0
                d = np.where(allowed, dest, 0)
                allowed &= dist_home[d] <= T - t1
            v_t[allowed] = np.maximum(v_t[allowed], arrive_value[d[allowed]])
        terminal_now = (T - t) <= dist_home
        v_t[terminal_now] = 0.0
        v_next = v_t

    d0 = dep.y * W + dep.x
    if T <= dist_home[d0]:
        return 0.0
    return float(v_next[d0, 0])


def _leg(t0: int, a, b, rt: int, T: int, depot, last: bool):
    """Earliest service minute at ``b`` leaving ``a`` at ``t0``, or None.

    Slack ``T - t - dist(pos, depot)`` must stay positive before the final
    service; moves toward the depot keep it, waits cost 1, moves away cost 2.
    Ordering toward-moves first, then waits, then away-moves keeps every
    intermediate slack at least the slack one step before arrival.
    """
    D = abs(a.x - b.x) + abs(a.y - b.y)
    da = abs(a.x - depot.x) + abs(a.y - depot.y)
    db = abs(b.x - depot.x) + abs(b.y - depot.y)
    s = max(t0 + D, rt)
    waits = s - t0 - D
    away = (D + db - da) // 2
    slack_final = T - s - db
    last_cost = 2 if away > 0 else (1 if waits > 0 else 0)
    if slack_final + last_cost <= 0:
        return None
    if slack_final < 0 or (not last and slack_final == 0):
        return None
    return s


def order_enumeration_optimal(instance: Instance, max_customers: int = 7) -> float:
    """Exact optimum by searching over customer visiting orders."""
    cfg = instance.config
    _require_unit_wait(instance)
    n = instance.num_customers
    if n > max_customers:
        raise OracleSizeError(f"{n} customers exceeds enumeration limit {max_customers}")
    T, depot = cfg.horizon, cfg.depot
    if T <= 0:
        return 0.0
    custs = instance.customers
    best = 0

    def dfs(t, pos, done: frozenset):
        nonlocal best
        best = max(best, len(done))
        if len(done) == n:
            return
        for c in custs:
            if c.id in done:
                continue
            # A served customer can be the last of the route (terminates there)
            # or an intermediate stop; try both readings of feasibility.
            s_last = _leg(t, pos, c.cell, c.request_time, T, depot, last=True)
            if s_last is None:
                continue
            best = max(best, len(done) + 1)
            s_mid = _leg(t, pos, c.cell, c.request_time, T, depot, last=False)
            if s_mid is not None:
                dfs(s_mid, c.cell, done | {c.id})

    dfs(0, depot, frozenset())
    return best * float(cfg.reward_per_customer)


def brute_force_optimal(instance: Instance) -> float:
    """Maximum return over every admissible action sequence (no memoization)."""
    state, _ = reset(instance, observe=False)
    if state.terminal:
        return 0.0

    def go(s) -> float:
        best = 0.0
        for a in np.flatnonzero(admissible_mask(s)):
            child = s.copy()
            r = step(child, int(a), observe=False).reward
            best = max(best, r + (0.0 if child.terminal else go(child)))
        return best

    return go(state)


# Reference simulator: state is (t, x, y, served frozenset, terminal, total).
# Customer activity is derived from the clock, not tracked.

def _ref_reset(instance: Instance):
    cfg = instance.config
    d = cfg.depot
    terminal = cfg.horizon - 0 <= 0
    return (0, d.x, d.y, frozenset(), terminal, 0.0)


def _ref_admissible(instance: Instance, st) -> list[int]:
    cfg = instance.config
    t, x, y = st[0], st[1], st[2]
    out = []
    for a, (dx, dy) in enumerate([(0, 1), (0, -1), (-1, 0), (1, 0)]):
        nx, ny = x + dx, y + dy
        if nx < 0 or ny < 0 or nx >= cfg.width or ny >= cfg.height:
            continue
        if abs(nx - cfg.depot.x) + abs(ny - cfg.depot.y) > cfg.horizon - t - 1:
            continue
        out.append(a)
    out.append(4)
    return out


def _ref_step(instance: Instance, st, action: int, serve_first: bool = False):
    cfg = instance.config
    t, x, y, served, terminal, total = st
    dx, dy = [(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)][action]
    nx, ny = x + dx, y + dy
    if 0 <= nx < cfg.width and 0 <= ny < cfg.height:
        x, y = nx, ny
    t += 1
    reward = 0.0
    cutoff = t - 1 if serve_first else t
    for c in instance.customers:
        if c.cell.x == x and c.cell.y == y and c.id not in served and c.request_time <= cutoff:
            served = served | {c.id}
            reward = float(cfg.reward_per_customer)
    terminal = cfg.horizon - t <= abs(x - cfg.depot.x) + abs(y - cfg.depot.y)
    return (t, x, y, served, terminal, total + reward), reward


def _ref_status(instance: Instance, st) -> list[int]:
    t, served = st[0], st[3]
    return [
        CustomerStatus.SERVED if c.id in served
        else CustomerStatus.ACTIVE if c.request_time <= t
        else CustomerStatus.POTENTIAL
        for c in instance.customers
    ]


@dataclass
class CheckReport:
    nodes: int = 0
    leaves: int = 0
    max_depth: int = 0
    best_return: float = 0.0
    notes: list[str] = field(default_factory=list)


def exhaustive_env_check(instance: Instance, depth_limit: int | None = None,
                         memoize: bool = True, reveal_before_serve: bool = True) -> CheckReport:
    """Compare env and reference simulator along every admissible action sequence.

    With ``memoize`` a subtree is expanded once per distinct pair of
    (env state, reference state); both simulators are deterministic functions
    of their state, so this covers every sequence.  Raises :class:`EnvMismatch`
    on the first disagreement.
    """
    _require_unit_wait(instance)
    report = CheckReport()
    env_state, _ = reset(instance, reveal_before_serve=reveal_before_serve, observe=False)
    ref = _ref_reset(instance)
    seen: set = set()

    def view_env(s):
        return {"t": s.t, "vehicle": (s.vehicle.x, s.vehicle.y), "status": s.status.tolist(),
                "terminal": s.terminal, "return": s.episode_return}

    def view_ref(r):
        return {"t": r[0], "vehicle": (r[1], r[2]), "status": [int(v) for v in _ref_status(instance, r)],
                "terminal": r[4], "return": r[5]}

    def compare(s, r, trace, env_reward=None, ref_reward=None):
        if env_reward is not None and env_reward != ref_reward:
            raise EnvMismatch(f"reward {env_reward} != {ref_reward}", trace, view_env(s), view_ref(r))
        ve, vr = view_env(s), view_ref(r)
        if ve != vr:
            raise EnvMismatch("state differs", trace, ve, vr)

    compare(env_state, ref, [])

    def go(s, r, trace):
        report.nodes += 1
        report.max_depth = max(report.max_depth, len(trace))
        report.best_return = max(report.best_return, s.episode_return)
        if s.terminal or (depth_limit is not None and len(trace) >= depth_limit):
            report.leaves += 1
            return
        if memoize:
            key = (s.key(), r)
            if key in seen:
                return
            seen.add(key)
        env_actions = [int(a) for a in np.flatnonzero(admissible_mask(s))]
        ref_actions = _ref_admissible(instance, r)
        if env_actions != ref_actions:
            raise EnvMismatch(
                f"admissible actions {env_actions} != {ref_actions}", trace, view_env(s), view_ref(r)
            )
        for a in env_actions:
            child = s.copy()
            res = step(child, a, observe=False)
            r2, rr = _ref_step(instance, r, a)
            t2 = trace + [Action(a).name]
            compare(child, r2, t2, res.reward, rr)
            if res.terminal != r2[4]:
                raise EnvMismatch("terminal flag differs", t2, view_env(child), view_ref(r2))
            go(child, r2, t2)

    go(env_state, ref, [])
    return report
