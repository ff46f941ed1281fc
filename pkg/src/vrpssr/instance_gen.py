"""Sampling, saving and loading of VRPSSR instances.

An instance is the fully revealed scenario of one workday: the grid, the depot,
the horizon, and every customer with its request minute.  Instances are a pure
function of ``(config, seed)``; randomness comes from numpy's ``PCG64`` bit
generator so that golden files stay stable across platforms.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

FORMAT_VERSION = 1
MAX_PLACEMENT_ATTEMPTS = 10_000


class InstanceError(ValueError):
    """Invalid instance data or a failed generation."""


class InstanceFormatError(InstanceError):
    """A malformed instance file; ``field`` names the offending entry."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class InstanceVersionError(InstanceError):
    pass


class PlacementError(InstanceError):
    """Raised when no free cell is found within the attempt budget."""


@dataclass(frozen=True, order=True)
class Cell:
    x: int
    y: int

    def in_grid(self, width: int, height: int) -> bool:
        return 0 <= self.x < width and 0 <= self.y < height


@dataclass(frozen=True)
class CustomerSpec:
    id: int
    cell: Cell
    request_time: int


@dataclass(frozen=True)
class InstanceConfig:
    width: int = 32
    height: int = 32
    horizon: int = 230
    depot: Cell = Cell(16, 16)
    cluster_centers: tuple[Cell, ...] = (Cell(8, 8), Cell(8, 24), Cell(24, 16))
    cluster_weights: tuple[float, ...] = (0.25, 0.5, 0.25)
    cluster_std: float = math.sqrt(2.0)
    initial_mean: float = 15.0
    ongoing_mean_total: float = 15.0
    reward_per_customer: float = 10.0
    wait_time: int = 1

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise InstanceError(f"grid must be at least 2x2, got {self.width}x{self.height}")
        # T=0 is accepted: it describes an empty workday that terminates at reset.
        if self.horizon < 0:
            raise InstanceError(f"horizon must be >= 0, got {self.horizon}")
        if not self.depot.in_grid(self.width, self.height):
            raise InstanceError(f"depot {self.depot} outside the grid")
        if len(self.cluster_centers) == 0:
            raise InstanceError("at least one cluster center is required")
        if len(self.cluster_centers) != len(self.cluster_weights):
            raise InstanceError("cluster_centers and cluster_weights differ in length")
        for c in self.cluster_centers:
            if not c.in_grid(self.width, self.height):
                raise InstanceError(f"cluster center {c} outside the grid")
        if any(w < 0 for w in self.cluster_weights):
            raise InstanceError("cluster weights must be nonnegative")
        if abs(sum(self.cluster_weights) - 1.0) > 1e-9:
            raise InstanceError(f"cluster weights sum to {sum(self.cluster_weights)}, not 1")
        if self.cluster_std <= 0:
            raise InstanceError("cluster_std must be positive")
        if self.initial_mean < 0 or self.ongoing_mean_total < 0:
            raise InstanceError("arrival means must be nonnegative")
        if self.wait_time < 1:
            raise InstanceError("wait_time must be >= 1")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["depot"] = [self.depot.x, self.depot.y]
        d["cluster_centers"] = [[c.x, c.y] for c in self.cluster_centers]
        d["cluster_weights"] = list(self.cluster_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InstanceConfig":
        d = dict(d)
        if "depot" in d:
            d["depot"] = Cell(*map(int, d["depot"]))
        if "cluster_centers" in d:
            d["cluster_centers"] = tuple(Cell(*map(int, c)) for c in d["cluster_centers"])
        if "cluster_weights" in d:
            d["cluster_weights"] = tuple(float(w) for w in d["cluster_weights"])
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InstanceFormatError(sorted(unknown)[0], "unknown config field")
        return cls(**d)


@dataclass(frozen=True)
class Instance:
    config: InstanceConfig
    customers: tuple[CustomerSpec, ...]
    seed: int = 0

    def validate(self) -> None:
        self.config.validate()
        seen: set[Cell] = set()
        for i, c in enumerate(self.customers):
            if c.id != i:
                raise InstanceError(f"customer ids must be 0..N-1 in order, got {c.id} at {i}")
            if not c.cell.in_grid(self.config.width, self.config.height):
                raise InstanceError(f"customer {c.id} cell {c.cell} outside the grid")
            if not 0 <= c.request_time <= self.config.horizon - 1:
                raise InstanceError(
                    f"customer {c.id} request_time {c.request_time} outside "
                    f"[0, {self.config.horizon - 1}]"
                )
            if c.cell == self.config.depot:
                raise InstanceError(f"customer {c.id} placed on the depot")
            if c.cell in seen:
                raise InstanceError(f"duplicate customer cell {c.cell}")
            seen.add(c.cell)

    @property
    def num_customers(self) -> int:
        return len(self.customers)


def make_rng(seed: int) -> np.random.Generator:
    """The one generator used for instance sampling (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


def draw_cluster_and_cell(
    config: InstanceConfig, occupied: set[Cell], rng: np.random.Generator
) -> tuple[int, Cell]:
    k = int(rng.choice(len(config.cluster_weights), p=config.cluster_weights))
    center = config.cluster_centers[k]
    for _ in range(MAX_PLACEMENT_ATTEMPTS):
        dx, dy = rng.normal(0.0, config.cluster_std, size=2)
        cell = Cell(int(math.floor(center.x + dx + 0.5)), int(math.floor(center.y + dy + 0.5)))
        if not cell.in_grid(config.width, config.height):
            continue
        if cell == config.depot or cell in occupied:
            continue
        return k, cell
    raise PlacementError(
        f"no free cell near cluster {k} after {MAX_PLACEMENT_ATTEMPTS} attempts"
    )


def sample_customer_cell(
    config: InstanceConfig, occupied: set[Cell], rng: np.random.Generator
) -> Cell:
    """Draw a cluster by weight, then redraw a rounded Gaussian offset until the
    cell is in the grid, off the depot and unoccupied."""
    return draw_cluster_and_cell(config, occupied, rng)[1]


def sample_request_times(config: InstanceConfig, rng: np.random.Generator) -> list[int]:
    T = config.horizon
    if T == 0:
        return []
    times = [0] * int(rng.poisson(config.initial_mean))
    if T > 1:
        counts = rng.poisson(config.ongoing_mean_total / (T - 1), size=T - 1)
        for t, n in enumerate(counts, start=1):
            times.extend([t] * int(n))
    return times


def sample_instance_with_clusters(config: InstanceConfig, seed: int) -> tuple[Instance, list[int]]:
    """Like :func:`sample_instance`, also returning each customer's cluster index."""
    config.validate()
    rng = make_rng(seed)
    times = sample_request_times(config, rng)
    occupied: set[Cell] = set()
    customers = []
    clusters = []
    for i, t in enumerate(times):
        k, cell = draw_cluster_and_cell(config, occupied, rng)
        occupied.add(cell)
        customers.append(CustomerSpec(id=i, cell=cell, request_time=t))
        clusters.append(k)
    return Instance(config=config, customers=tuple(customers), seed=int(seed)), clusters


def sample_instance(config: InstanceConfig, seed: int) -> Instance:
    return sample_instance_with_clusters(config, seed)[0]


def instance_to_dict(instance: Instance) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "seed": instance.seed,
        "config": instance.config.to_dict(),
        "customers": [
            {"id": c.id, "x": c.cell.x, "y": c.cell.y, "request_time": c.request_time}
            for c in instance.customers
        ],
    }


def _require(d: dict, key: str, kind, where: str):
    if key not in d:
        raise InstanceFormatError(where + key, "missing")
    v = d[key]
    if kind is int and (isinstance(v, bool) or not isinstance(v, int)):
        raise InstanceFormatError(where + key, f"expected integer, got {v!r}")
    if kind is dict and not isinstance(v, dict):
        raise InstanceFormatError(where + key, "expected an object")
    if kind is list and not isinstance(v, list):
        raise InstanceFormatError(where + key, "expected an array")
    return v


def instance_from_dict(d: dict) -> Instance:
    if not isinstance(d, dict):
        raise InstanceFormatError("<root>", "expected an object")
    version = _require(d, "format_version", int, "")
    if version != FORMAT_VERSION:
        raise InstanceVersionError(
            f"instance file has format_version {version}, expected {FORMAT_VERSION}"
        )
    seed = _require(d, "seed", int, "")
    try:
        config = InstanceConfig.from_dict(_require(d, "config", dict, ""))
        config.validate()
    except InstanceFormatError:
        raise
    except (TypeError, ValueError) as e:
        raise InstanceFormatError("config", str(e)) from e

    customers = []
    seen: dict[Cell, int] = {}
    for i, raw in enumerate(_require(d, "customers", list, "")):
        where = f"customers[{i}]."
        if not isinstance(raw, dict):
            raise InstanceFormatError(f"customers[{i}]", "expected an object")
        cid = _require(raw, "id", int, where)
        x = _require(raw, "x", int, where)
        y = _require(raw, "y", int, where)
        rt = _require(raw, "request_time", int, where)
        if cid != i:
            raise InstanceFormatError(where + "id", f"expected {i}, got {cid}")
        cell = Cell(x, y)
        if not cell.in_grid(config.width, config.height):
            raise InstanceFormatError(where + "x", f"cell {cell} outside the grid")
        if not 0 <= rt <= config.horizon - 1:
            raise InstanceFormatError(
                where + "request_time", f"{rt} out of range [0, {config.horizon - 1}]"
            )
        if cell == config.depot:
            raise InstanceFormatError(where + "x", f"customer on depot cell {cell}")
        if cell in seen:
            raise InstanceFormatError(
                where + "x", f"duplicate cell {cell} (also customer {seen[cell]})"
            )
        seen[cell] = cid
        customers.append(CustomerSpec(id=cid, cell=cell, request_time=rt))
    return Instance(config=config, customers=tuple(customers), seed=seed)


def dumps_instance(instance: Instance) -> str:
    return json.dumps(instance_to_dict(instance), indent=1, sort_keys=True) + "\n"


def save_instance(instance: Instance, path: str | Path) -> None:
    Path(path).write_text(dumps_instance(instance))


def load_instance(path: str | Path) -> Instance:
    text = Path(path).read_text()
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise InstanceFormatError("<root>", f"not valid JSON ({e})") from e
    return instance_from_dict(d)


def instance_stream(config: InstanceConfig, seeds: Iterable[int]):
    for s in seeds:
        yield sample_instance(config, s)
