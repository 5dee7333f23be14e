"""A small numpy layer kit with hand-written backward passes.

Each ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes the upstream gradient and that cache. Inputs may carry any number of
leading batch axes; the feature axis is always last. Parameter gradients are
summed over every leading axis.
"""
from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from dipv.errors import InvalidInput
from dipv.geometry import as_rng

LEAKY_SLOPE = 0.01


class ParameterSet:
    """Named float64 parameters, each with a same-shape gradient slot."""

    def __init__(self, params: dict[str, np.ndarray] | None = None):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> np.ndarray:
        if name in self.params:
            raise InvalidInput(f"duplicate parameter name {name!r}")
        arr = np.array(value, dtype=np.float64, copy=True)
        self.params[name] = arr
        self.grads[name] = np.zeros_like(arr)
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0.0)

    def accumulate(self, grads: dict[str, np.ndarray]):
        for name, g in grads.items():
            self.grads[name] += g

    def copy(self) -> ParameterSet:
        out = ParameterSet(self.params)
        for name, g in self.grads.items():
            out.grads[name][...] = g
        return out

    def num_values(self) -> int:
        return sum(p.size for p in self.params.values())

    def checksum(self) -> str:
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f8").tobytes())
        return h.hexdigest()


# ---------------------------------------------------------------- checkpoints
# Layout: 8-byte little-endian manifest length, UTF-8 JSON manifest, then the
# parameters as contiguous little-endian float64. Offsets are in bytes from
# the start of the data block.


def save_checkpoint(params: ParameterSet, path) -> None:
    entries, blobs, offset = [], [], 0
    for name in params.names():
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        # ascontiguousarray promotes 0-d arrays, so take the shape from the source
        entries.append({"name": name, "shape": list(params[name].shape), "offset": offset})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    manifest = json.dumps({"format": "dipv-params-v1", "params": entries}).encode()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> ParameterSet:
    raw = Path(path).read_bytes()
    (mlen,) = struct.unpack_from("<Q", raw, 0)
    manifest = json.loads(raw[8 : 8 + mlen].decode())
    data = raw[8 + mlen :]
    out = ParameterSet()
    for entry in manifest["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=entry["offset"])
        out.add(entry["name"], arr.reshape(shape))
    return out


# ------------------------------------------------------------------- layers


def affine_forward(x, w, b=None):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w.shape[0]:
        raise InvalidInput(f"affine: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    if b is not None and b.shape[-1] != w.shape[1]:
        raise InvalidInput("affine: bias width does not match weight columns")
    y = x @ w
    if b is not None:
        y = y + b
    return y, (x, w, b is not None)


def affine_backward(dy, cache):
    x, w, has_bias = cache
    dx = dy @ w.T
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0) if has_bias else None
    return dx, dw, db


def leaky_relu_forward(x, slope=LEAKY_SLOPE):
    mask = x > 0
    return np.where(mask, x, slope * x), (mask, slope)


def leaky_relu_backward(dy, cache):
    mask, slope = cache
    return np.where(mask, dy, slope * dy)


def relu_forward(x):
    return leaky_relu_forward(x, 0.0)


relu_backward = leaky_relu_backward


def sigmoid(x):
    # split by sign so neither branch overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def layernorm_forward(x, gain=None, bias=None, eps=1e-5):
    """Standardise over the last axis (population variance), then scale/shift."""
    if eps <= 0:
        raise InvalidInput("layernorm epsilon must be positive")
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat
    if gain is not None:
        y = y * gain
    if bias is not None:
        y = y + bias
    return y, (xhat, inv, gain, bias is not None)


def layernorm_backward(dy, cache):
    xhat, inv, gain, has_bias = cache
    flat = dy.reshape(-1, dy.shape[-1])
    dgain = (flat * xhat.reshape(flat.shape)).sum(axis=0) if gain is not None else None
    dbias = flat.sum(axis=0) if has_bias else None
    dxhat = dy * gain if gain is not None else dy
    dx = inv * (
        dxhat
        - dxhat.mean(axis=-1, keepdims=True)
        - xhat * np.mean(dxhat * xhat, axis=-1, keepdims=True)
    )
    return dx, dgain, dbias


def softmax_forward(x):
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=-1, keepdims=True)
    return p, p


def softmax_backward(dy, p):
    return p * (dy - np.sum(dy * p, axis=-1, keepdims=True))


def dropout_forward(x, rate, train_mode, seed=None):
    """Inverted dropout. With ``train_mode`` off the input is returned as is."""
    if not 0.0 <= rate < 1.0:
        raise InvalidInput(f"dropout rate must lie in [0, 1), got {rate}")
    if not train_mode or rate == 0.0:
        return x, None
    keep = as_rng(seed).random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    mask = keep * scale
    return x * mask, mask


def dropout_backward(dy, mask):
    return dy if mask is None else dy * mask


# ----------------------------------------------------------- cross-attention

ATTENTION_PARAMS = ("wq", "wk", "wv", "wo")


def init_attention(params: ParameterSet, d: int, rng, prefix="attn_"):
    for name in ATTENTION_PARAMS:
        params.add(prefix + name, rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)))


def cross_attention_forward(query, keys, values, params, prefix="attn_"):
    """Single-head scaled dot-product attention with learned projections.

    query: (..., N, d); keys and values: (..., M, d). Returns (..., N, d).
    """
    wq, wk, wv, wo = (params[prefix + n] for n in ATTENTION_PARAMS)
    d = query.shape[-1]
    if keys.shape[-1] != d or values.shape[-1] != d or wq.shape[0] != d:
        raise InvalidInput("cross_attention: feature widths disagree")
    if keys.shape[-2] != values.shape[-2]:
        raise InvalidInput("cross_attention: keys and values differ in length")
    q = query @ wq
    k = keys @ wk
    v = values @ wv
    scale = 1.0 / np.sqrt(wk.shape[1])
    logits = (q @ np.swapaxes(k, -1, -2)) * scale
    attn, _ = softmax_forward(logits)
    ctx = attn @ v
    out = ctx @ wo
    cache = (query, keys, values, q, k, v, attn, ctx, scale, prefix)
    return out, cache


def cross_attention_backward(dout, cache, params):
    """Returns (d_query, d_keys, d_values, grads)."""
    query, keys, values, q, k, v, attn, ctx, scale, prefix = cache
    wq, wk, wv, wo = (params[prefix + n] for n in ATTENTION_PARAMS)

    def _outer(a, b):
        return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])

    grads = {prefix + "wo": _outer(ctx, dout)}
    dctx = dout @ wo.T
    dattn = dctx @ np.swapaxes(v, -1, -2)
    dv = np.swapaxes(attn, -1, -2) @ dctx
    dlogits = softmax_backward(dattn, attn) * scale
    dq = dlogits @ k
    dk = np.swapaxes(dlogits, -1, -2) @ q
    grads[prefix + "wq"] = _outer(query, dq)
    grads[prefix + "wk"] = _outer(keys, dk)
    grads[prefix + "wv"] = _outer(values, dv)
    return dq @ wq.T, dk @ wk.T, dv @ wv.T, grads


# --------------------------------------------------------------- gate fusion


def init_gate(params: ParameterSet, d: int, rng, prefix="gate_"):
    params.add(prefix + "w", rng.normal(0.0, 1.0 / np.sqrt(2 * d), size=(2 * d, d)))
    params.add(prefix + "b", np.zeros(d))
    params.add(prefix + "proj", rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, d)))


def gate_fusion_forward(local, global_vec, params, prefix="gate_"):
    """g = sigmoid([local | global] W + b); out = g*local + (1-g)*(global P).

    local: (..., N, d); global_vec: (..., d) or (..., 1, d), broadcast over N.
    """
    w, b, proj = params[prefix + "w"], params[prefix + "b"], params[prefix + "proj"]
    d = local.shape[-1]
    squeeze = global_vec.ndim == local.ndim - 1
    if squeeze:
        global_vec = global_vec[..., None, :]
    if global_vec.shape[-1] != d or w.shape != (2 * d, d):
        raise InvalidInput("gate_fusion: feature widths disagree")
    if global_vec.shape[-2] != 1 or global_vec.shape[:-2] != local.shape[:-2]:
        raise InvalidInput("gate_fusion: global vector is not broadcastable over points")
    gb = np.broadcast_to(global_vec, local.shape)
    joined = np.concatenate([local, gb], axis=-1)
    gate = sigmoid(joined @ w + b)
    pg = global_vec @ proj
    out = gate * local + (1.0 - gate) * pg
    return out, (local, global_vec, joined, gate, pg, prefix, squeeze)


def gate_fusion_backward(dout, cache, params):
    """Returns (d_local, d_global, grads)."""
    local, global_vec, joined, gate, pg, prefix, squeeze = cache
    w, proj = params[prefix + "w"], params[prefix + "proj"]
    d = local.shape[-1]
    dgate = dout * (local - pg)
    dlocal = dout * gate
    dpg = np.sum(dout * (1.0 - gate), axis=-2, keepdims=True)
    dz = dgate * gate * (1.0 - gate)
    flat_j = joined.reshape(-1, 2 * d)
    flat_dz = dz.reshape(-1, d)
    grads = {
        prefix + "w": flat_j.T @ flat_dz,
        prefix + "b": flat_dz.sum(axis=0),
        prefix + "proj": global_vec.reshape(-1, d).T @ dpg.reshape(-1, d),
    }
    djoined = dz @ w.T
    dlocal = dlocal + djoined[..., :d]
    dglobal = np.sum(djoined[..., d:], axis=-2, keepdims=True) + dpg @ proj.T
    if squeeze:
        dglobal = dglobal[..., 0, :]
    return dlocal, dglobal, grads


# ---------------------------------------------------------------------- loss


def cross_entropy_label_smoothing(logits, labels, smoothing=0.1):
    """Mean smoothed cross-entropy over the batch and its gradient w.r.t. logits.

    The target puts ``1 - smoothing`` on the true class and spreads
    ``smoothing`` uniformly over all C classes.
    """
    logits = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    b, c = logits.shape
    if labels.shape[0] != b:
        raise InvalidInput("one label per logit row is required")
    if np.any(labels < 0) or np.any(labels >= c):
        raise InvalidInput(f"label index outside [0, {c})")
    if not 0.0 <= smoothing < 1.0:
        raise InvalidInput("smoothing must lie in [0, 1)")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    target = np.full((b, c), smoothing / c)
    target[np.arange(b), labels] += 1.0 - smoothing
    loss = -np.sum(target * logp) / b
    grad = (np.exp(logp) - target) / b
    return float(loss), grad


# ----------------------------------------------------------------- optimiser


def cosine_lr(step: int, total_steps: int, start=0.1, end=0.001) -> float:
    if total_steps <= 0:
        return start
    t = min(max(step, 0), total_steps) / total_steps
    return end + 0.5 * (start - end) * (1.0 + np.cos(np.pi * t))


@dataclass
class TrainState:
    params: ParameterSet
    momentum: float = 0.9
    lr_start: float = 0.1
    lr_end: float = 0.001
    total_steps: int = 1
    step: int = 0
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    losses: list[float] = field(default_factory=list)

    def __post_init__(self):
        for name in self.params:
            self.velocity.setdefault(name, np.zeros_like(self.params[name]))

    @property
    def lr(self) -> float:
        return cosine_lr(self.step, self.total_steps, self.lr_start, self.lr_end)


def clip_grad_norm(params: ParameterSet, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping. ``max_norm <= 0`` disables clipping.
    """
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in params.grads.values())))
    if max_norm > 0 and total > max_norm:
        scale = max_norm / total
        for g in params.grads.values():
            g *= scale
    return total


def sgd_step(state: TrainState) -> float:
    """One momentum-SGD update using the gradients stored in ``state.params``.

    v <- momentum * v + g; p <- p - lr * v. Returns the learning rate used.
    """
    lr = state.lr
    for name in state.params:
        v = state.velocity[name]
        v *= state.momentum
        v += state.params.grads[name]
        state.params.params[name] -= lr * v
    state.step += 1
    return lr
