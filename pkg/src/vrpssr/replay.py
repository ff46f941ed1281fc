"""Proportional prioritized experience replay backed by a sum-tree.

Leaves hold ``priority ** alpha`` so sampling is a prefix-sum descent.  A
parallel max-tree tracks the largest raw priority currently stored, which new
transitions inherit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import NUM_ACTIONS


class ReplayUsageError(RuntimeError):
    pass


class SumTree:
    """Complete binary tree over ``capacity`` leaves (padded to a power of two)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        size = 1
        while size < capacity:
            size *= 2
        self.leaf_base = size
        self.sums = np.zeros(2 * size, dtype=np.float64)
        self.maxes = np.zeros(2 * size, dtype=np.float64)

    @property
    def total(self) -> float:
        return float(self.sums[1])

    def leaf(self, i: int) -> float:
        return float(self.sums[self.leaf_base + i])

    def leaves(self) -> np.ndarray:
        return self.sums[self.leaf_base : self.leaf_base + self.capacity].copy()

    def set(self, i: int, value: float, raw: float | None = None) -> None:
        """Set leaf ``i`` to ``value``; ``raw`` feeds the max-tree (defaults to value)."""
        if not 0 <= i < self.capacity:
            raise IndexError(i)
        node = self.leaf_base + i
        self.sums[node] = value
        self.maxes[node] = value if raw is None else raw
        node //= 2
        while node >= 1:
            left, right = 2 * node, 2 * node + 1
            # Recompute instead of adding deltas so sums never drift.
            self.sums[node] = self.sums[left] + self.sums[right]
            self.maxes[node] = max(self.maxes[left], self.maxes[right])
            node //= 2

    def max_raw(self) -> float:
        return float(self.maxes[1])

    def find(self, value: float) -> int:
        """Leaf whose cumulative interval ``[lo, lo + leaf)`` contains ``value``."""
        node = 1
        while node < self.leaf_base:
            left = 2 * node
            if value < self.sums[left]:
                node = left
            else:
                value -= self.sums[left]
                node = left + 1
        return min(node - self.leaf_base, self.capacity - 1)


@dataclass
class SampleBatch:
    planes: np.ndarray
    time_left: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_planes: np.ndarray
    next_time_left: np.ndarray
    terminals: np.ndarray
    next_masks: np.ndarray
    indices: np.ndarray
    generations: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.indices)


class PrioritizedReplay:
    """Ring buffer of transitions with proportional prioritized sampling.

    Observations are stored as uint8 planes plus a float time scalar.
    ``update_priorities`` ignores indices whose slot has been overwritten since
    they were sampled.
    """

    def __init__(self, capacity: int, plane_shape: tuple[int, int, int], alpha: float = 0.6,
                 eps: float = 1e-2):
        self.capacity = int(capacity)
        self.plane_shape = tuple(plane_shape)
        self.alpha = float(alpha)
        self.eps = float(eps)
        self.tree = SumTree(self.capacity)
        self.planes = np.zeros((self.capacity, *self.plane_shape), dtype=np.uint8)
        self.next_planes = np.zeros((self.capacity, *self.plane_shape), dtype=np.uint8)
        self.time_left = np.zeros(self.capacity, dtype=np.float32)
        self.next_time_left = np.zeros(self.capacity, dtype=np.float32)
        self.actions = np.zeros(self.capacity, dtype=np.int8)
        self.rewards = np.zeros(self.capacity, dtype=np.float32)
        self.terminals = np.zeros(self.capacity, dtype=bool)
        self.next_masks = np.zeros((self.capacity, NUM_ACTIONS), dtype=bool)
        self.generation = np.zeros(self.capacity, dtype=np.int64)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def priority(self, i: int) -> float:
        """Raw (pre-exponent) priority of slot ``i``."""
        return float(self.tree.maxes[self.tree.leaf_base + i])

    def push(self, planes, time_left, action, reward, next_planes, next_time_left, terminal,
             next_mask=None) -> int:
        if not 0 <= int(action) < NUM_ACTIONS:
            raise ReplayUsageError(f"action {action} out of range")
        i = self.cursor
        # Clear the overwritten slot first so its priority cannot set the max.
        self.tree.set(i, 0.0, 0.0)
        raw = self.tree.max_raw()
        if raw <= 0.0:
            raw = 1.0
        self.planes[i] = planes
        self.next_planes[i] = next_planes
        self.time_left[i] = time_left
        self.next_time_left[i] = next_time_left
        self.actions[i] = action
        self.rewards[i] = reward
        self.terminals[i] = terminal
        self.next_masks[i] = True if next_mask is None else next_mask
        self.generation[i] += 1
        self.tree.set(i, raw**self.alpha, raw)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def sample(self, batch_size: int, beta: float, rng: np.random.Generator) -> SampleBatch:
        if self.size < batch_size or batch_size < 1:
            raise ReplayUsageError(
                f"cannot sample {batch_size} transitions from a buffer holding {self.size}"
            )
        total = self.tree.total
        segment = total / batch_size
        idx = np.empty(batch_size, dtype=np.int64)
        for k in range(batch_size):
            v = rng.uniform(k * segment, (k + 1) * segment)
            i = self.tree.find(min(v, np.nextafter(total, 0.0)))
            if i >= self.size:
                i = self.size - 1
            idx[k] = i
        leaf_vals = self.tree.sums[self.tree.leaf_base + idx]
        probs = leaf_vals / total
        w = (self.size * probs) ** (-beta)
        w = w / w.max()
        return SampleBatch(
            planes=self.planes[idx],
            time_left=self.time_left[idx],
            actions=self.actions[idx].astype(np.intp),
            rewards=self.rewards[idx],
            next_planes=self.next_planes[idx],
            next_time_left=self.next_time_left[idx],
            terminals=self.terminals[idx],
            next_masks=self.next_masks[idx],
            indices=idx,
            generations=self.generation[idx].copy(),
            weights=w,
        )

    def update_priorities(self, indices, td_errors, generations=None) -> None:
        td_errors = np.asarray(td_errors, dtype=np.float64)
        for k, i in enumerate(np.asarray(indices)):
            i = int(i)
            if not 0 <= i < self.size:
                raise ReplayUsageError(f"index {i} outside the filled buffer")
            if generations is not None and self.generation[i] != generations[k]:
                continue
            p = abs(float(td_errors[k])) + self.eps
            self.tree.set(i, p**self.alpha, p)

    def probabilities(self) -> np.ndarray:
        leaves = self.tree.leaves()[: self.size]
        return leaves / leaves.sum()

    def nbytes(self) -> int:
        return sum(
            a.nbytes
            for a in (self.planes, self.next_planes, self.time_left, self.next_time_left, self.actions,
                      self.rewards, self.terminals, self.next_masks, self.generation,
                      self.tree.sums, self.tree.maxes)
        )

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "replay/planes": self.planes[: self.size],
            "replay/next_planes": self.next_planes[: self.size],
            "replay/time_left": self.time_left[: self.size],
            "replay/next_time_left": self.next_time_left[: self.size],
            "replay/actions": self.actions[: self.size],
            "replay/rewards": self.rewards[: self.size],
            "replay/terminals": self.terminals[: self.size],
            "replay/next_masks": self.next_masks[: self.size],
            "replay/generation": self.generation[: self.size],
            "replay/raw_priority": self.tree.maxes[self.tree.leaf_base : self.tree.leaf_base + self.size],
            "replay/counters": np.array([self.cursor, self.size], dtype=np.int64),
        }

    def load_state_arrays(self, arrays: dict) -> None:
        cursor, size = (int(v) for v in arrays["replay/counters"])
        if size > self.capacity:
            raise ReplayUsageError("snapshot larger than buffer capacity")
        for name in ("planes", "next_planes", "time_left", "next_time_left", "actions", "rewards",
                     "terminals", "next_masks", "generation"):
            getattr(self, name)[:size] = arrays[f"replay/{name}"]
        self.cursor, self.size = cursor, size
        for i, raw in enumerate(arrays["replay/raw_priority"]):
            self.tree.set(i, float(raw) ** self.alpha, float(raw))

    @staticmethod
    def estimate_nbytes(capacity: int, plane_shape: tuple[int, int, int]) -> int:
        per = 2 * int(np.prod(plane_shape)) + 4 + 4 + 1 + 4 + 1 + NUM_ACTIONS + 8
        size = 1
        while size < capacity:
            size *= 2
        return capacity * per + 2 * 2 * size * 8
