"""Named presets and the resolved run configuration.

A run config file is JSON::

    {"preset": "small",
     "instance": {"horizon": 40, ...},
     "training": {"episodes": 2000, ...},
     "seed": 0}

Values are applied in order: preset, file, command-line overrides.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

from .agent import TrainingConfig
from .instance_gen import Cell, InstanceConfig

PAPER_INSTANCE = InstanceConfig()
PAPER_TRAINING = TrainingConfig()

SMALL_INSTANCE = InstanceConfig(
    width=8,
    height=8,
    horizon=40,
    depot=Cell(4, 4),
    cluster_centers=(Cell(2, 5), Cell(5, 2)),
    cluster_weights=(0.5, 0.5),
    cluster_std=math.sqrt(2.0),
    initial_mean=4.0,
    ongoing_mean_total=4.0,
)
SMALL_TRAINING = TrainingConfig(
    eps_decay_steps=50_000,
    memory_capacity=50_000,
    warmup_steps=1_000,
    per_beta_steps=30_000,
    target_sync_every=500,
    episodes=2_000,
    conv_stride=1,
)

PRESETS: dict[str, tuple[InstanceConfig, TrainingConfig]] = {
    "paper": (PAPER_INSTANCE, PAPER_TRAINING),
    "small": (SMALL_INSTANCE, SMALL_TRAINING),
}


@dataclass(frozen=True)
class RunConfig:
    preset: str
    instance: InstanceConfig
    training: TrainingConfig
    seed: int = 0

    def to_dict(self) -> dict:
        return {
            "preset": self.preset,
            "seed": self.seed,
            "instance": self.instance.to_dict(),
            "training": self.training.to_dict(),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def parse_override(text: str) -> tuple[str, str, object]:
    """``instance.horizon=40`` -> ("instance", "horizon", 40)."""
    if "=" not in text:
        raise ValueError(f"override {text!r} is not of the form section.field=value")
    key, value = text.split("=", 1)
    if "." not in key:
        raise ValueError(f"override key {key!r} must be section.field")
    section, name = key.split(".", 1)
    if section not in ("instance", "training"):
        raise ValueError(f"unknown override section {section!r}")
    return section, name, _coerce(value)


def resolve(preset: str = "small", file: str | Path | None = None,
            overrides: list[str] | None = None, seed: int | None = None) -> RunConfig:
    data: dict = {}
    if file is not None:
        data = json.loads(Path(file).read_text())
        preset = data.get("preset", preset)
    if preset not in PRESETS:
        raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    inst, train = PRESETS[preset]
    inst_d = inst.to_dict()
    train_d = train.to_dict()
    inst_d.update(data.get("instance", {}))
    train_d.update(data.get("training", {}))
    if "seed" in data:
        train_d["seed"] = data["seed"]
    for text in overrides or []:
        section, name, value = parse_override(text)
        target = inst_d if section == "instance" else train_d
        if name not in target:
            raise ValueError(f"unknown {section} field {name!r}")
        target[name] = value
    if seed is not None:
        train_d["seed"] = seed
    run_seed = int(train_d["seed"])
    instance = InstanceConfig.from_dict(inst_d)
    instance.validate()
    training = TrainingConfig.from_dict(train_d)
    training.validate()
    return RunConfig(preset=preset, instance=instance, training=training, seed=run_seed)


def with_training(run: RunConfig, **changes) -> RunConfig:
    return replace(run, training=replace(run.training, **changes))
