"""Dueling double DQN with prioritized replay: schedules, targets, training loop.

All schedules count environment steps.  Parameter updates happen after step
``s`` whenever ``s > warmup_steps`` and ``(s - warmup_steps) % train_every == 0``;
the target network is re-synced whenever ``s % target_sync_every == 0``.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .env import NUM_ACTIONS, Action, EnvState, admissible_mask, reset, step
from .instance_gen import Instance, InstanceConfig, sample_instance
from .observation import NUM_PLANES, FrameStack, feature_layers
from .qnetwork import (
    Architecture,
    QNetworkParams,
    RMSPropState,
    backward,
    forward,
    init_params,
    params_from_arrays,
    params_to_arrays,
    read_container,
    rmsprop_update,
    sync_target,
    write_container,
)
from .replay import PrioritizedReplay, SampleBatch

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "vrpssr-d3qn"


class ResumeMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    gamma: float = 0.99
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_decay_steps: int = 1_000_000
    memory_capacity: int = 1_000_000
    warmup_steps: int = 10_000
    train_every: int = 16
    batch_size: int = 32
    per_alpha: float = 0.6
    per_beta0: float = 0.4
    per_beta_steps: int = 600_000
    per_eps: float = 1e-2
    target_sync_every: int = 2_000
    learning_rate: float = 0.001
    rms_decay: float = 0.99
    rms_eps: float = 1e-8
    huber: float | None = None
    episodes: int = 25_000
    seed: int = 0
    instance_seed: int = 1_000_000
    frame_stack: int = 1
    conv_stride: int = 2
    eval_epsilon: float = 0.05

    def validate(self) -> None:
        positive = ("eps_decay_steps", "memory_capacity", "train_every", "batch_size",
                    "per_beta_steps", "target_sync_every", "frame_stack", "conv_stride")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.warmup_steps < 0 or self.episodes < 0:
            raise ValueError("warmup_steps and episodes must be nonnegative")
        if not 0 <= self.eps_end <= self.eps_start <= 1:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0 <= self.per_beta0 <= 1:
            raise ValueError("per_beta0 must lie in [0, 1]")
        if not 0 <= self.gamma <= 1:
            raise ValueError("gamma must lie in [0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown training field(s): {sorted(unknown)}")
        return cls(**d)


def epsilon(step: int, config: TrainingConfig) -> float:
    frac = step * (config.eps_start - config.eps_end) / config.eps_decay_steps
    return max(config.eps_end, config.eps_start - frac)


def beta(step: int, config: TrainingConfig) -> float:
    return min(1.0, config.per_beta0 + step * (1.0 - config.per_beta0) / config.per_beta_steps)


def select_action(qvalues, mask, eps: float, rng: np.random.Generator) -> Action:
    """Epsilon-greedy over admissible actions; ties go to the lowest index.

    ``qvalues`` may be a zero-argument callable, evaluated only when the greedy
    branch is taken.  Exactly one uniform draw is consumed per call, plus one
    more on the exploring branch.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no admissible action")
    if rng.random() < eps:
        return Action(int(rng.choice(np.flatnonzero(mask))))
    q = qvalues() if callable(qvalues) else qvalues
    q = np.where(mask, np.asarray(q, dtype=np.float64).reshape(-1), -np.inf)
    return Action(int(np.argmax(q)))


def td_targets(batch: SampleBatch, online: QNetworkParams, target: QNetworkParams,
               gamma: float) -> np.ndarray:
    """Double-DQN targets: online network picks the next action, target evaluates it."""
    rewards = np.asarray(batch.rewards, dtype=np.float64)
    q_online = forward(online, batch.next_planes, batch.next_time_left)
    q_online = np.where(batch.next_masks, q_online, -np.inf)
    best = np.argmax(q_online, axis=1)
    q_target = forward(target, batch.next_planes, batch.next_time_left)
    bootstrap = q_target[np.arange(len(best)), best].astype(np.float64)
    return rewards + gamma * np.where(batch.terminals, 0.0, bootstrap)


@dataclass
class EpisodeRecord:
    episode: int
    instance_seed: int
    episode_return: float
    served: int
    total_customers: int
    steps: int
    epsilon: float
    total_steps: int
    updates: int
    wall_time: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))


@dataclass
class TrainLog:
    records: list[EpisodeRecord] = field(default_factory=list)

    def append(self, rec: EpisodeRecord) -> None:
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    def returns(self) -> np.ndarray:
        return np.array([r.episode_return for r in self.records])

    def trailing_mean(self, window: int) -> float:
        r = self.returns()
        if r.size == 0:
            return float("nan")
        return float(r[-window:].mean())

    def comparable(self) -> list[dict]:
        """Records without wall-clock timing, for determinism comparisons."""
        out = []
        for r in self.records:
            d = asdict(r)
            d.pop("wall_time")
            out.append(d)
        return out

    def write_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for r in self.records:
                fh.write(r.to_json() + "\n")

    @classmethod
    def read_jsonl(cls, path: str | Path) -> "TrainLog":
        out = cls()
        for line in Path(path).read_text().splitlines():
            if line.strip():
                out.append(EpisodeRecord(**json.loads(line)))
        return out


class InstanceSampler:
    """Episode ``k`` plays the instance sampled with seed ``base_seed + k``."""

    def __init__(self, config: InstanceConfig, base_seed: int):
        self.config = config
        self.base_seed = base_seed

    def seed_for(self, episode: int) -> int:
        return self.base_seed + episode

    def __call__(self, episode: int) -> Instance:
        return sample_instance(self.config, self.seed_for(episode))


def architecture_for(instance_config: InstanceConfig, frame_stack: int = 1,
                     conv_stride: int = 2) -> Architecture:
    return Architecture(
        in_planes=NUM_PLANES * frame_stack,
        height=instance_config.height,
        width=instance_config.width,
        stride=conv_stride,
    )


class Trainer:
    """Owns the networks, optimizer, replay buffer and RNG of one training run."""

    def __init__(self, instance_config: InstanceConfig, config: TrainingConfig,
                 sampler: Callable[[int], Instance] | None = None):
        config.validate()
        instance_config.validate()
        self.instance_config = instance_config
        self.config = config
        self.sampler = sampler or InstanceSampler(instance_config, config.instance_seed)
        self.arch = architecture_for(instance_config, config.frame_stack, config.conv_stride)
        self.online = init_params(config.seed, self.arch)
        self.target = sync_target(self.online)
        self.opt = RMSPropState.zeros_like(
            self.online, learning_rate=config.learning_rate, decay=config.rms_decay, eps=config.rms_eps
        )
        self.replay = PrioritizedReplay(
            config.memory_capacity,
            (self.arch.in_planes, self.arch.height, self.arch.width),
            alpha=config.per_alpha,
            eps=config.per_eps,
        )
        self.rng = np.random.Generator(np.random.PCG64(config.seed + 1))
        self.total_steps = 0
        self.episode = 0
        self.updates = 0
        self.syncs = 0
        self.log = TrainLog()
        self.last_loss = float("nan")

    def act(self, obs, mask, eps: float) -> Action:
        return select_action(
            lambda: forward(self.online, obs.planes[None], np.array([obs.time_left]))[0],
            mask, eps, self.rng,
        )

    def learn(self) -> None:
        cfg = self.config
        batch = self.replay.sample(cfg.batch_size, beta(self.total_steps, cfg), self.rng)
        y = td_targets(batch, self.online, self.target, cfg.gamma)
        grads, delta = backward(
            self.online, batch.planes, batch.time_left, batch.actions, y, batch.weights, huber=cfg.huber
        )
        rmsprop_update(self.online, grads, self.opt)
        self.replay.update_priorities(batch.indices, delta, batch.generations)
        self.updates += 1
        self.last_loss = float(np.mean(batch.weights * delta**2))

    def _after_env_step(self) -> None:
        cfg = self.config
        self.total_steps += 1
        s = self.total_steps
        if s > cfg.warmup_steps and (s - cfg.warmup_steps) % cfg.train_every == 0:
            if len(self.replay) >= cfg.batch_size:
                self.learn()
        if s % cfg.target_sync_every == 0:
            self.target = sync_target(self.online)
            self.syncs += 1

    def run_episode(self, max_steps: int | None = None) -> EpisodeRecord:
        cfg = self.config
        t0 = time.perf_counter()
        instance = self.sampler(self.episode)
        seed = getattr(self.sampler, "seed_for", lambda k: -1)(self.episode)
        state, obs = reset(instance)
        stack = FrameStack(cfg.frame_stack)
        obs = stack.reset(obs)
        steps = 0
        while not state.terminal:
            if max_steps is not None and self.total_steps >= max_steps:
                break
            eps = epsilon(self.total_steps, cfg)
            action = self.act(obs, admissible_mask(state), eps)
            res = step(state, action)
            next_obs = stack.push(res.observation)
            next_mask = admissible_mask(state) if not state.terminal else np.ones(NUM_ACTIONS, bool)
            self.replay.push(obs.planes, obs.time_left, int(action), res.reward, next_obs.planes,
                             next_obs.time_left, res.terminal, next_mask)
            obs = next_obs
            steps += 1
            self._after_env_step()
        rec = EpisodeRecord(
            episode=self.episode,
            instance_seed=int(seed),
            episode_return=float(state.episode_return),
            served=state.num_served,
            total_customers=instance.num_customers,
            steps=steps,
            epsilon=epsilon(self.total_steps, cfg),
            total_steps=self.total_steps,
            updates=self.updates,
            wall_time=time.perf_counter() - t0,
        )
        self.log.append(rec)
        self.episode += 1
        return rec

    def train(self, episodes: int | None = None, max_steps: int | None = None,
              on_episode: Callable[["Trainer", EpisodeRecord], None] | None = None) -> TrainLog:
        """Run until ``episodes`` episodes in total (or ``max_steps`` env steps) are done."""
        n = self.config.episodes if episodes is None else episodes
        while self.episode < n:
            if max_steps is not None and self.total_steps >= max_steps:
                break
            rec = self.run_episode(max_steps=max_steps)
            if on_episode is not None:
                on_episode(self, rec)
        return self.log

    # checkpoints

    def meta(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "architecture": asdict(self.arch),
            "training": self.config.to_dict(),
            "instance": self.instance_config.to_dict(),
            "total_steps": self.total_steps,
            "episode": self.episode,
            "updates": self.updates,
            "syncs": self.syncs,
            "rng_state": self.rng.bit_generator.state,
        }

    def save(self, path: str | Path, include_replay: bool = False) -> None:
        arrays = {}
        arrays.update(params_to_arrays("online", self.online))
        arrays.update(params_to_arrays("target", self.target))
        arrays.update({f"rmsprop/{k}": v for k, v in self.opt.accum.items()})
        meta = self.meta()
        meta["has_replay"] = include_replay
        if include_replay:
            arrays.update(self.replay.state_arrays())
        write_container(path, meta, arrays)

    @classmethod
    def load(cls, path: str | Path, instance_config: InstanceConfig | None = None,
             config: TrainingConfig | None = None, sampler=None,
             log_records: list[EpisodeRecord] | None = None) -> "Trainer":
        """Restore a run.  Passing configs checks them against the checkpoint;
        only ``episodes`` may differ."""
        meta, arrays = read_container(path)
        if meta.get("format") != CHECKPOINT_FORMAT:
            raise ResumeMismatchError(f"{path}: not a training checkpoint")
        saved_inst = InstanceConfig.from_dict(meta["instance"])
        saved_train = TrainingConfig.from_dict(meta["training"])
        if instance_config is not None and instance_config != saved_inst:
            raise ResumeMismatchError("instance config differs from the checkpoint")
        if config is not None:
            a = {k: v for k, v in config.to_dict().items() if k != "episodes"}
            b = {k: v for k, v in saved_train.to_dict().items() if k != "episodes"}
            if a != b:
                diff = sorted(k for k in a if a[k] != b.get(k))
                raise ResumeMismatchError(f"training config differs from the checkpoint: {diff}")
        trainer = cls(saved_inst, config or saved_train, sampler)
        if asdict(trainer.arch) != meta["architecture"]:
            raise ResumeMismatchError("architecture differs from the checkpoint")
        trainer.online = params_from_arrays("online", trainer.arch, arrays)
        trainer.target = params_from_arrays("target", trainer.arch, arrays)
        for k in trainer.opt.accum:
            trainer.opt.accum[k] = arrays[f"rmsprop/{k}"]
        trainer.rng.bit_generator.state = meta["rng_state"]
        trainer.total_steps = meta["total_steps"]
        trainer.episode = meta["episode"]
        trainer.updates = meta["updates"]
        trainer.syncs = meta["syncs"]
        if meta.get("has_replay"):
            trainer.replay.load_state_arrays(arrays)
        else:
            log.warning("checkpoint has no replay snapshot; continuation will not match an "
                        "uninterrupted run")
        if log_records is not None:
            trainer.log = TrainLog(list(log_records[: trainer.episode]))
        return trainer


def load_policy_params(path: str | Path) -> tuple[QNetworkParams, dict]:
    """Online network and metadata from a training checkpoint."""
    meta, arrays = read_container(path)
    arch = Architecture(**meta["architecture"])
    return params_from_arrays("online", arch, arrays), meta


class QPolicy:
    """Epsilon-greedy policy over a frozen network, usable with ``run_episode``."""

    def __init__(self, params: QNetworkParams, eps: float = 0.05, frame_stack: int = 1):
        self.params = params
        self.eps = eps
        self.stack = FrameStack(frame_stack)
        self._t = None

    def reset(self, state: EnvState) -> None:
        self.stack.reset(feature_layers(state))
        self._t = state.t

    def __call__(self, state: EnvState, rng: np.random.Generator) -> Action:
        if self._t is None or state.t == 0 or state.t < self._t:
            obs = self.stack.reset(feature_layers(state))
        elif state.t != self._t:
            obs = self.stack.push(feature_layers(state))
        else:
            obs = self.stack._current(feature_layers(state).time_left)
        self._t = state.t
        return select_action(
            lambda: forward(self.params, obs.planes[None], np.array([obs.time_left]))[0],
            admissible_mask(state), self.eps, rng,
        )
