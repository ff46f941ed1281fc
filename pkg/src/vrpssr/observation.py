"""Feature-layer observations and grayscale renders of an episode state.

Both share the screen orientation: array row 0 is grid row ``y = H - 1``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import CustomerStatus, EnvState

VEHICLE, ACTIVE, POTENTIAL = 0, 1, 2
NUM_PLANES = 3

BORDER = 2
BAR_HEIGHT = 2


@dataclass(frozen=True)
class Palette:
    background: int = 0
    border: int = 60
    depot: int = 100
    potential: int = 160
    active: int = 250
    vehicle: int = 255
    time_bar: int = 255


DEFAULT_PALETTE = Palette()


@dataclass
class Observation:
    planes: np.ndarray  # (3 * frames, H, W) uint8 in {0, 1}
    time_left: float

    def __eq__(self, other):
        if not isinstance(other, Observation):
            return NotImplemented
        return self.time_left == other.time_left and np.array_equal(self.planes, other.planes)


@dataclass
class RenderFrame:
    pixels: np.ndarray  # (height, width) uint8

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def time_fraction(state: EnvState) -> float:
    T = state.layout.horizon
    if T == 0:
        return 0.0
    return (T - state.t) / T


def feature_layers(state: EnvState) -> Observation:
    lay = state.layout
    H, W = lay.height, lay.width
    planes = np.zeros((NUM_PLANES, H, W), dtype=np.uint8)
    planes[VEHICLE, H - 1 - state.vehicle.y, state.vehicle.x] = 1
    if lay.xs.size:
        rows = H - 1 - lay.ys
        active = state.status == CustomerStatus.ACTIVE
        potential = state.status == CustomerStatus.POTENTIAL
        planes[ACTIVE, rows[active], lay.xs[active]] = 1
        planes[POTENTIAL, rows[potential], lay.xs[potential]] = 1
    return Observation(planes=planes, time_left=time_fraction(state))


def render_size(width: int, height: int) -> tuple[int, int]:
    """(width, height) in pixels of a render for a ``width x height`` grid."""
    return width + 2 * BORDER, height + 2 * BORDER + BAR_HEIGHT


def render_frame(state: EnvState, palette: Palette = DEFAULT_PALETTE) -> RenderFrame:
    """Grayscale screen: time bar on top, bordered playable area below it.

    Draw order is depot, potential customers, vehicle ring, active customers.
    """
    lay = state.layout
    H, W = lay.height, lay.width
    rw, rh = render_size(W, H)
    px = np.full((rh, rw), palette.background, dtype=np.uint8)

    top = BAR_HEIGHT + BORDER  # first playable row
    left = BORDER
    px[BAR_HEIGHT:, :] = palette.border
    px[top : top + H, left : left + W] = palette.background

    fill = int(round(W * time_fraction(state)))
    px[:BAR_HEIGHT, left : left + fill] = palette.time_bar

    play = px[top : top + H, left : left + W]

    def put(x: int, y: int, value: int) -> None:
        if 0 <= x < W and 0 <= y < H:
            play[H - 1 - y, x] = value

    put(lay.depot.x, lay.depot.y, palette.depot)
    for cid in np.flatnonzero(state.status == CustomerStatus.POTENTIAL):
        put(int(lay.xs[cid]), int(lay.ys[cid]), palette.potential)
    vx, vy = state.vehicle.x, state.vehicle.y
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx or dy:
                put(vx + dx, vy + dy, palette.vehicle)
    for cid in np.flatnonzero(state.status == CustomerStatus.ACTIVE):
        put(int(lay.xs[cid]), int(lay.ys[cid]), palette.active)
    return RenderFrame(pixels=px)


def write_pgm(path: str | Path, frame: RenderFrame | np.ndarray) -> None:
    """Binary (P5) portable graymap, maxval 255."""
    pixels = frame.pixels if isinstance(frame, RenderFrame) else frame
    pixels = np.ascontiguousarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())


def read_pgm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: unsupported maxval {maxval}")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


class FrameStack:
    """Concatenates the last ``k`` feature-layer frames along the plane axis.

    At episode start the first frame is repeated to fill the stack.  The time
    scalar is taken from the newest frame.
    """

    def __init__(self, k: int = 1):
        if k < 1:
            raise ValueError("frame stack size must be >= 1")
        self.k = k
        self._frames: deque[np.ndarray] = deque(maxlen=k)

    def reset(self, obs: Observation) -> Observation:
        self._frames.clear()
        for _ in range(self.k):
            self._frames.append(obs.planes)
        return self._current(obs.time_left)

    def push(self, obs: Observation) -> Observation:
        self._frames.append(obs.planes)
        return self._current(obs.time_left)

    def _current(self, time_left: float) -> Observation:
        if self.k == 1:
            return Observation(planes=self._frames[0], time_left=time_left)
        return Observation(planes=np.concatenate(list(self._frames), axis=0), time_left=time_left)
