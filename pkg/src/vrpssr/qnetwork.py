"""Convolutional dueling Q-network in plain numpy.

Layout::

    planes (C, H, W) -> conv 4x4/s (16) -> ReLU -> conv 4x4/s (32) -> ReLU
      -> flatten ++ [time_left] -> dense 256 -> ReLU
      -> value head:      dense 128 -> ReLU -> dense 1
      -> advantage head:  dense 128 -> ReLU -> dense 5
    Q = V + A - mean(A)

Both convolutions use padding 1 and a shared stride ``s`` (2 by default).

Gradients are written out by hand; :func:`backward` returns the gradient of
``mean_i w_i * loss(target_i - Q(s_i, a_i))`` where ``loss`` is the squared error
(or its Huber-clipped variant).
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 4
STRIDE = 2
PAD = 1


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class Architecture:
    in_planes: int = 3
    height: int = 32
    width: int = 32
    conv1_filters: int = 16
    conv2_filters: int = 32
    dense_units: int = 256
    head_units: int = 128
    num_actions: int = 5
    stride: int = STRIDE

    def _out(self, n: int) -> int:
        return (n + 2 * PAD - KERNEL) // self.stride + 1

    @property
    def conv1_hw(self) -> tuple[int, int]:
        return self._out(self.height), self._out(self.width)

    @property
    def conv2_hw(self) -> tuple[int, int]:
        h, w = self.conv1_hw
        return self._out(h), self._out(w)

    @property
    def flat_size(self) -> int:
        h, w = self.conv2_hw
        return self.conv2_filters * h * w

    def shapes(self) -> dict[str, tuple[int, ...]]:
        c1, c2 = self.conv1_filters, self.conv2_filters
        return {
            "conv1_w": (c1, self.in_planes, KERNEL, KERNEL),
            "conv1_b": (c1,),
            "conv2_w": (c2, c1, KERNEL, KERNEL),
            "conv2_b": (c2,),
            "dense_w": (self.flat_size + 1, self.dense_units),
            "dense_b": (self.dense_units,),
            "value1_w": (self.dense_units, self.head_units),
            "value1_b": (self.head_units,),
            "value2_w": (self.head_units, 1),
            "value2_b": (1,),
            "adv1_w": (self.dense_units, self.head_units),
            "adv1_b": (self.head_units,),
            "adv2_w": (self.head_units, self.num_actions),
            "adv2_b": (self.num_actions,),
        }


@dataclass
class QNetworkParams:
    arch: Architecture
    tensors: dict[str, np.ndarray]

    @property
    def dtype(self):
        return self.tensors["conv1_w"].dtype

    def copy(self) -> "QNetworkParams":
        return QNetworkParams(self.arch, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "QNetworkParams":
        return QNetworkParams(self.arch, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def init_params(seed: int, arch: Architecture = Architecture(), dtype=np.float32) -> QNetworkParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero."""
    rng = np.random.Generator(np.random.PCG64(seed))
    tensors = {}
    for name, shape in arch.shapes().items():
        if name.endswith("_b"):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:])) if name.startswith("conv") else shape[0]
            bound = 1.0 / np.sqrt(fan_in)
            tensors[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return QNetworkParams(arch, tensors)


def _im2col(x: np.ndarray, stride: int) -> tuple[np.ndarray, int, int]:
    B, C = x.shape[:2]
    xp = np.pad(x, ((0, 0), (0, 0), (PAD, PAD), (PAD, PAD)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(2, 3))[:, :, ::stride, ::stride]
    Ho, Wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * KERNEL * KERNEL)
    return cols, Ho, Wo


def _conv_forward(x, w, b, stride):
    B = x.shape[0]
    F = w.shape[0]
    cols, Ho, Wo = _im2col(x, stride)
    out = cols @ w.reshape(F, -1).T + b
    return out.reshape(B, Ho, Wo, F).transpose(0, 3, 1, 2), cols


def _conv_backward(dout, cols, x_shape, w, stride, need_dx=True):
    B, C, H, W = x_shape
    F = w.shape[0]
    Ho, Wo = dout.shape[2], dout.shape[3]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, F)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    if not need_dx:
        return None, dw, db
    dcols = (d2 @ w.reshape(F, -1)).reshape(B, Ho, Wo, C, KERNEL, KERNEL)
    dxp = np.zeros((B, C, H + 2 * PAD, W + 2 * PAD), dtype=dout.dtype)
    for i in range(KERNEL):
        for j in range(KERNEL):
            dxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    return dxp[:, :, PAD : PAD + H, PAD : PAD + W], dw, db


def _check_input(params: QNetworkParams, planes: np.ndarray, time_left: np.ndarray):
    a = params.arch
    if planes.ndim != 4 or planes.shape[1:] != (a.in_planes, a.height, a.width):
        raise ShapeError(
            f"expected planes of shape (B, {a.in_planes}, {a.height}, {a.width}), got {planes.shape}"
        )
    if planes.shape[0] == 0:
        raise ShapeError("empty batch")
    if time_left.shape != (planes.shape[0],):
        raise ShapeError(f"time_left shape {time_left.shape} does not match batch {planes.shape[0]}")


def forward(params: QNetworkParams, planes, time_left, return_parts: bool = False, _cache=None):
    """Q-values for a batch; ``planes`` is (B, C, H, W), ``time_left`` is (B,)."""
    p = params.tensors
    dt = params.dtype
    planes = np.asarray(planes)
    time_left = np.asarray(time_left).reshape(-1)
    _check_input(params, planes, time_left)
    x = planes.astype(dt, copy=False)
    tl = time_left.astype(dt, copy=False)
    B = x.shape[0]

    st = params.arch.stride
    z1, cols1 = _conv_forward(x, p["conv1_w"], p["conv1_b"], st)
    a1 = np.maximum(z1, 0)
    z2, cols2 = _conv_forward(a1, p["conv2_w"], p["conv2_b"], st)
    a2 = np.maximum(z2, 0)
    f = np.concatenate([a2.reshape(B, -1), tl[:, None]], axis=1)
    z3 = f @ p["dense_w"] + p["dense_b"]
    h = np.maximum(z3, 0)
    zv = h @ p["value1_w"] + p["value1_b"]
    hv = np.maximum(zv, 0)
    v = hv @ p["value2_w"] + p["value2_b"]
    za = h @ p["adv1_w"] + p["adv1_b"]
    ha = np.maximum(za, 0)
    adv = ha @ p["adv2_w"] + p["adv2_b"]
    q = v + adv - adv.mean(axis=1, keepdims=True)

    if _cache is not None:
        _cache.update(
            x_shape=x.shape, cols1=cols1, z1=z1, a1=a1, cols2=cols2, z2=z2, f=f, z3=z3,
            h=h, zv=zv, hv=hv, za=za, ha=ha,
        )
    if return_parts:
        return q, v[:, 0], adv
    return q


def forward_obs(params: QNetworkParams, observations) -> np.ndarray:
    planes = np.stack([o.planes for o in observations])
    time_left = np.array([o.time_left for o in observations])
    return forward(params, planes, time_left)


def td_loss(delta: np.ndarray, weights: np.ndarray, huber: float | None = None) -> float:
    if huber is None:
        per = delta**2
    else:
        ad = np.abs(delta)
        per = np.where(ad <= huber, delta**2, huber * (2 * ad - huber))
    return float(np.mean(weights * per))


def backward(
    params: QNetworkParams,
    planes,
    time_left,
    actions,
    targets,
    weights,
    huber: float | None = None,
):
    """Gradients of the importance-weighted TD loss.

    Returns ``(grads, td_errors)`` where ``td_errors[i] = targets[i] - Q(s_i, a_i)``.
    """
    p = params.tensors
    dt = params.dtype
    cache: dict = {}
    q = forward(params, planes, time_left, _cache=cache)
    B = q.shape[0]
    actions = np.asarray(actions, dtype=np.intp)
    targets = np.asarray(targets, dtype=dt)
    weights = np.asarray(weights, dtype=dt)
    idx = np.arange(B)
    delta = targets - q[idx, actions]

    g = delta if huber is None else np.clip(delta, -huber, huber)
    dq = np.zeros_like(q)
    dq[idx, actions] = -2.0 * weights * g / B

    grads = {}
    dv = dq.sum(axis=1, keepdims=True)
    dadv = dq - dq.mean(axis=1, keepdims=True)

    grads["value2_w"] = cache["hv"].T @ dv
    grads["value2_b"] = dv.sum(axis=0)
    dzv = (dv @ p["value2_w"].T) * (cache["zv"] > 0)
    grads["value1_w"] = cache["h"].T @ dzv
    grads["value1_b"] = dzv.sum(axis=0)

    grads["adv2_w"] = cache["ha"].T @ dadv
    grads["adv2_b"] = dadv.sum(axis=0)
    dza = (dadv @ p["adv2_w"].T) * (cache["za"] > 0)
    grads["adv1_w"] = cache["h"].T @ dza
    grads["adv1_b"] = dza.sum(axis=0)

    dh = dzv @ p["value1_w"].T + dza @ p["adv1_w"].T
    dz3 = dh * (cache["z3"] > 0)
    grads["dense_w"] = cache["f"].T @ dz3
    grads["dense_b"] = dz3.sum(axis=0)
    df = dz3 @ p["dense_w"].T

    a2_shape = (B, params.arch.conv2_filters, *params.arch.conv2_hw)
    dz2 = df[:, :-1].reshape(a2_shape) * (cache["z2"] > 0)
    da1, grads["conv2_w"], grads["conv2_b"] = _conv_backward(
        dz2, cache["cols2"], cache["a1"].shape, p["conv2_w"], params.arch.stride
    )
    dz1 = da1 * (cache["z1"] > 0)
    _, grads["conv1_w"], grads["conv1_b"] = _conv_backward(
        dz1, cache["cols1"], cache["x_shape"], p["conv1_w"], params.arch.stride, need_dx=False
    )
    grads = {k: grads[k].astype(dt, copy=False) for k in p}
    return grads, delta


@dataclass
class RMSPropState:
    accum: dict[str, np.ndarray]
    learning_rate: float = 0.001
    decay: float = 0.99
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: QNetworkParams, **kw) -> "RMSPropState":
        return cls(accum={k: np.zeros_like(v) for k, v in params.tensors.items()}, **kw)

    def copy(self) -> "RMSPropState":
        return RMSPropState(
            {k: v.copy() for k, v in self.accum.items()}, self.learning_rate, self.decay, self.eps
        )


def rmsprop_update(params: QNetworkParams, grads: dict, state: RMSPropState):
    """In place: ``v = decay*v + (1-decay)*g^2``; ``theta -= lr*g/(sqrt(v)+eps)``."""
    for k, theta in params.tensors.items():
        g = grads[k]
        v = state.accum[k]
        v *= state.decay
        v += (1.0 - state.decay) * g * g
        theta -= state.learning_rate * g / (np.sqrt(v) + state.eps)
    return params, state


def sync_target(online: QNetworkParams) -> QNetworkParams:
    return online.copy()


# Checkpoint container.
#
#   offset 0   8 bytes   magic b"VRPQCKPT"
#   offset 8   uint32 LE container version (1)
#   offset 12  uint32 LE header length N
#   offset 16  N bytes   UTF-8 JSON header:
#                 {"meta": {...}, "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}]}
#   offset 16+N          array payloads, C order, little-endian, back to back;
#                        each "offset" is relative to the start of the payload.
CKPT_MAGIC = b"VRPQCKPT"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def write_container(path: str | Path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        a = a.astype(a.dtype.newbyteorder("<"), copy=False)
        b = a.tobytes()
        entries.append(
            {"name": name, "dtype": a.dtype.str, "shape": list(a.shape), "offset": offset, "nbytes": len(b)}
        )
        blobs.append(b)
        offset += len(b)
    header = json.dumps({"meta": meta, "arrays": entries}, sort_keys=True).encode("utf-8")
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(header)))
        fh.write(header)
        for b in blobs:
            fh.write(b)
    tmp.replace(path)


def read_container(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<II", data[8:16])
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: container version {version}, expected {CKPT_VERSION}")
    header = json.loads(data[16 : 16 + hlen].decode("utf-8"))
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = data[start : start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=np.dtype(e["dtype"])).reshape(e["shape"]).copy()
    return header["meta"], arrays


def params_to_arrays(prefix: str, params: QNetworkParams) -> dict[str, np.ndarray]:
    return {f"{prefix}/{k}": v for k, v in params.tensors.items()}


def params_from_arrays(prefix: str, arch: Architecture, arrays: dict) -> QNetworkParams:
    tensors = {}
    for name, shape in arch.shapes().items():
        key = f"{prefix}/{name}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint lacks {key}")
        if tuple(arrays[key].shape) != shape:
            raise CheckpointError(f"{key}: shape {arrays[key].shape} does not match architecture {shape}")
        tensors[name] = arrays[key]
    return QNetworkParams(arch, tensors)


def architecture_to_dict(arch: Architecture) -> dict:
    return asdict(arch)
