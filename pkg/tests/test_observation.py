import numpy as np
import pytest

from vrpssr.env import Action, reset, step
from vrpssr.instance_gen import Cell
from vrpssr.observation import (
    ACTIVE,
    BAR_HEIGHT,
    BORDER,
    DEFAULT_PALETTE,
    POTENTIAL,
    VEHICLE,
    FrameStack,
    feature_layers,
    read_pgm,
    render_frame,
    render_size,
    write_pgm,
)

from conftest import make_instance


def big(customers=(), horizon=230):
    return make_instance(width=32, height=32, horizon=horizon, depot=(16, 16), customers=customers)


def playable(frame, W=32, H=32):
    top = BAR_HEIGHT + BORDER
    return frame.pixels[top : top + H, BORDER : BORDER + W]


def test_feature_planes_at_reset():
    state, obs = reset(big(customers=[(3, 5, 0), (20, 1, 7)]))
    assert obs.planes.shape == (3, 32, 32) and obs.planes.dtype == np.uint8
    assert obs.planes[VEHICLE].sum() == 1 and obs.planes[VEHICLE, 31 - 16, 16] == 1
    assert obs.planes[ACTIVE].sum() == 1 and obs.planes[ACTIVE, 31 - 5, 3] == 1
    assert obs.planes[POTENTIAL].sum() == 1 and obs.planes[POTENTIAL, 31 - 1, 20] == 1
    assert obs.time_left == 1.0


def test_served_customer_disappears():
    state, _ = reset(big(customers=[(17, 16, 0)]))
    res = step(state, Action.RIGHT)
    assert res.observation.planes[ACTIVE].sum() == 0
    assert res.observation.planes[POTENTIAL].sum() == 0


def test_time_left_halfway():
    state, _ = reset(big())
    state.t = 115
    assert feature_layers(state).time_left == 0.5


def test_render_size_default_grid():
    assert render_size(32, 32) == (36, 38)
    state, _ = reset(big())
    frame = render_frame(state)
    assert (frame.width, frame.height) == (36, 38)
    assert frame.pixels.dtype == np.uint8


def test_time_bar_full_then_half():
    state, _ = reset(big())
    px = render_frame(state).pixels
    assert np.all(px[:BAR_HEIGHT, BORDER : BORDER + 32] == DEFAULT_PALETTE.time_bar)
    assert np.all(px[:BAR_HEIGHT, :BORDER] == DEFAULT_PALETTE.background)
    state.t = 115
    px = render_frame(state).pixels
    assert (px[0] == DEFAULT_PALETTE.time_bar).sum() == 16


def test_border_and_depot():
    state, _ = reset(big())
    state.vehicle = Cell(0, 31)
    px = render_frame(state).pixels
    assert np.all(px[BAR_HEIGHT : BAR_HEIGHT + BORDER, :] == DEFAULT_PALETTE.border)
    assert np.all(px[-BORDER:, :] == DEFAULT_PALETTE.border)
    assert playable(render_frame(state))[31 - 16, 16] == DEFAULT_PALETTE.depot


def test_vehicle_ring_clipped_at_corner():
    state, _ = reset(big())
    state.vehicle = Cell(0, 0)
    play = playable(render_frame(state))
    assert (play == DEFAULT_PALETTE.vehicle).sum() == 3
    assert play[31, 0] == DEFAULT_PALETTE.background


def test_active_customer_visible_inside_ring():
    state, _ = reset(big(customers=[(5, 5, 0), (6, 6, 100)]))
    state.vehicle = Cell(5, 5)
    play = playable(render_frame(state))
    assert play[31 - 5, 5] == DEFAULT_PALETTE.active
    # Potential customer under the ring is overdrawn by the ring.
    assert play[31 - 6, 6] == DEFAULT_PALETTE.vehicle
    assert (play == DEFAULT_PALETTE.vehicle).sum() == 8


def test_active_overdraws_ring():
    state, _ = reset(big(customers=[(6, 5, 0)]))
    state.vehicle = Cell(5, 5)
    play = playable(render_frame(state))
    assert play[31 - 5, 6] == DEFAULT_PALETTE.active
    assert (play == DEFAULT_PALETTE.vehicle).sum() == 7


def test_pgm_round_trip(tmp_path):
    state, _ = reset(big(customers=[(1, 1, 0), (30, 30, 5)]))
    frame = render_frame(state)
    path = tmp_path / "f.pgm"
    write_pgm(path, frame)
    assert path.read_bytes().startswith(b"P5\n36 38\n255\n")
    assert np.array_equal(read_pgm(path), frame.pixels)


def test_frame_stack():
    state, obs0 = reset(big(customers=[(17, 16, 3)]))
    fs = FrameStack(3)
    stacked = fs.reset(obs0)
    assert stacked.planes.shape == (9, 32, 32)
    assert np.array_equal(stacked.planes[:3], stacked.planes[6:])
    res = step(state, Action.UP)
    stacked = fs.push(res.observation)
    assert np.array_equal(stacked.planes[6:], res.observation.planes)
    assert np.array_equal(stacked.planes[:3], obs0.planes)
    assert stacked.time_left == res.observation.time_left
    with pytest.raises(ValueError):
        FrameStack(0)
