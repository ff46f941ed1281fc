"""Self-checks run by ``vrpssr verify``.

Each check returns a :class:`CheckResult`; none of them raise on failure.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .instance_gen import (
    Cell,
    CustomerSpec,
    Instance,
    InstanceConfig,
    sample_instance_with_clusters,
)
from .oracle import EnvMismatch, exhaustive_env_check, offline_optimal, order_enumeration_optimal
from .qnetwork import Architecture, backward, forward, init_params, td_loss
from .replay import PrioritizedReplay


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.name}: {self.detail} ({self.seconds:.1f}s)"


def random_small_instance(rng: np.random.Generator, width: int, height: int, horizon: int,
                          n_customers: int) -> Instance:
    """Uniformly placed customers with uniform request minutes; depot at the center."""
    depot = Cell(width // 2, height // 2)
    cells = [Cell(x, y) for y in range(height) for x in range(width) if Cell(x, y) != depot]
    n_customers = min(n_customers, len(cells))
    picks = rng.choice(len(cells), size=n_customers, replace=False)
    cfg = InstanceConfig(
        width=width, height=height, horizon=horizon, depot=depot,
        cluster_centers=(depot,), cluster_weights=(1.0,), initial_mean=0.0, ongoing_mean_total=0.0,
    )
    customers = tuple(
        CustomerSpec(id=i, cell=cells[p], request_time=int(rng.integers(0, max(horizon, 1))))
        for i, p in enumerate(picks)
    )
    inst = Instance(config=cfg, customers=customers if horizon > 0 else (), seed=0)
    inst.validate()
    return inst


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@_timed
def check_env_exhaustive(n_instances: int = 20, seed: int = 0, reveal_before_serve: bool = True,
                         max_side: int = 5, max_horizon: int = 10, max_customers: int = 3) -> CheckResult:
    rng = np.random.default_rng(seed)
    nodes = 0
    for k in range(n_instances):
        inst = random_small_instance(
            rng, int(rng.integers(2, max_side + 1)), int(rng.integers(2, max_side + 1)),
            int(rng.integers(0, max_horizon + 1)), int(rng.integers(0, max_customers + 1)),
        )
        try:
            nodes += exhaustive_env_check(inst, reveal_before_serve=reveal_before_serve).nodes
        except EnvMismatch as e:
            return CheckResult("env exhaustive", False, f"instance {k}: {e}")
    return CheckResult("env exhaustive", True, f"{n_instances} instances, {nodes} nodes agree")


@_timed
def check_oracle_consistency(n_instances: int = 50, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    for k in range(n_instances):
        inst = random_small_instance(
            rng, int(rng.integers(2, 7)), int(rng.integers(2, 7)), int(rng.integers(1, 17)),
            int(rng.integers(0, 6)),
        )
        dp = offline_optimal(inst)
        enum = order_enumeration_optimal(inst)
        if dp != enum:
            return CheckResult("oracle consistency", False, f"instance {k}: dp={dp} enumeration={enum}")
    return CheckResult("oracle consistency", True, f"{n_instances} instances, DP == enumeration")


def finite_difference_errors(seed: int, h: float = 1e-5) -> float:
    """Largest relative error between analytic and central-difference gradients."""
    rng = np.random.default_rng(seed)
    side = int(rng.choice([4, 8]))
    arch = Architecture(in_planes=int(rng.integers(1, 4)), height=side, width=side,
                        conv1_filters=int(rng.integers(1, 4)), conv2_filters=int(rng.integers(1, 4)),
                        dense_units=int(rng.integers(2, 9)), head_units=int(rng.integers(2, 7)))
    params = init_params(int(rng.integers(1 << 30)), arch, dtype=np.float64)
    for v in params.tensors.values():
        v += rng.normal(0.0, 0.2, size=v.shape)
    B = int(rng.integers(1, 5))
    planes = rng.integers(0, 2, size=(B, arch.in_planes, side, side)).astype(np.float64)
    tl = rng.random(B)
    actions = rng.integers(0, 5, size=B)
    targets = rng.normal(0.0, 2.0, size=B)
    weights = rng.uniform(0.1, 1.0, size=B)
    grads, _ = backward(params, planes, tl, actions, targets, weights)

    def loss() -> float:
        q = forward(params, planes, tl)
        return td_loss(targets - q[np.arange(B), actions], weights)

    worst = 0.0
    for name, theta in params.tensors.items():
        flat = theta.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = loss()
            flat[i] = old - h
            lm = loss()
            flat[i] = old
            fd = (lp - lm) / (2 * h)
            err = abs(fd - g[i]) / max(abs(fd), abs(g[i]), 1e-6)
            worst = max(worst, err)
    return worst


@_timed
def check_gradients(n_configs: int = 10, tol: float = 1e-4) -> CheckResult:
    worst = max(finite_difference_errors(s) for s in range(n_configs))
    return CheckResult("gradient check", worst < tol, f"max relative error {worst:.2e} over {n_configs} configs")


def per_two_item_frequency(buffer_alpha: float = 0.6, ratio: float = 3.0, draws: int = 100_000,
                           seed: int = 0, assumed_alpha: float = 0.6) -> float:
    """Frequency of the heavier item when priorities are set so that p^alpha
    has ratio ``ratio`` under ``assumed_alpha``."""
    buf = PrioritizedReplay(2, (1, 1, 1), alpha=buffer_alpha)
    z = np.zeros((1, 1, 1), np.uint8)
    for _ in range(2):
        buf.push(z, 1.0, 0, 0.0, z, 1.0, False)
    p_light = 1.0
    p_heavy = ratio ** (1.0 / assumed_alpha)
    buf.update_priorities([0, 1], [p_heavy - buf.eps, p_light - buf.eps])
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(draws):
        hits += int(buf.sample(1, 0.4, rng).indices[0] == 0)
    return hits / draws


@_timed
def check_per_frequency(buffer_alpha: float = 0.6) -> CheckResult:
    f = per_two_item_frequency(buffer_alpha=buffer_alpha)
    ok = abs(f - 0.75) <= 0.01
    return CheckResult("PER 3:1 frequency", ok, f"heavy-item frequency {f:.4f} (want 0.75 +- 0.01)")


@_timed
def check_instance_statistics(n_seeds: int = 10_000, config: InstanceConfig = InstanceConfig()) -> CheckResult:
    """Arrival counts and cluster shares over all sampled customers.

    The placement spread is measured on the first customer of each instance,
    whose draw is not yet affected by occupied-cell redraws; the spread over
    all customers is reported alongside it.
    """
    initial = np.empty(n_seeds)
    total = np.empty(n_seeds)
    counts = np.zeros(len(config.cluster_centers))
    first, every = [], []
    for s in range(n_seeds):
        inst, clusters = sample_instance_with_clusters(config, s)
        initial[s] = sum(1 for c in inst.customers if c.request_time == 0)
        total[s] = inst.num_customers
        for j, (c, k) in enumerate(zip(inst.customers, clusters)):
            counts[k] += 1
            center = config.cluster_centers[k]
            off = (c.cell.x - center.x, c.cell.y - center.y)
            every.append(off)
            if j == 0:
                first.append(off)
    shares = counts / max(counts.sum(), 1.0)
    sd = np.asarray(first, dtype=float).std(axis=0)
    sd_all = np.asarray(every, dtype=float).std(axis=0)
    ok = (
        14.5 <= initial.mean() <= 15.5
        and 29.3 <= total.mean() <= 30.7
        and np.all(np.abs(shares - np.asarray(config.cluster_weights)) <= 0.01)
        and np.all(np.abs(sd - config.cluster_std) <= 0.05)
    )
    detail = (f"initial {initial.mean():.3f}, total {total.mean():.3f}, shares "
              f"{np.round(shares, 4).tolist()}, axis sd {np.round(sd, 4).tolist()} "
              f"(all customers incl. redraws {np.round(sd_all, 4).tolist()})")
    return CheckResult("instance statistics", bool(ok), detail)


def run_all(quick: bool = False) -> list[CheckResult]:
    return [
        check_env_exhaustive(n_instances=5 if quick else 20),
        check_oracle_consistency(n_instances=10 if quick else 50),
        check_gradients(n_configs=3 if quick else 10),
        check_per_frequency(),
        # The tolerances need the full sample even in quick mode.
        check_instance_statistics(n_seeds=10_000),
    ]
