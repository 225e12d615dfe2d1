"""Bidirectional LSTM with backpropagation through time.

Gate layout along the last axis of the kernels is ``[input, forget, output,
candidate]``. The configurable activation is applied to the cell state when
producing the hidden state (``h = o * act(c)``); gates stay sigmoid and the
candidate stays tanh.
"""
from __future__ import annotations

import numpy as np

from .layers import ACTIVATIONS, Layer, ShapeError, activate, glorot_uniform, sigmoid
from .parallel import map_ordered, shard_bounds

DIRECTIONS = ("f", "b")


class StaleCacheError(RuntimeError):
    pass


def _cell_act_grad(name: str, c: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return 1 - a * a
    if name == "relu":
        return (c > 0).astype(c.dtype)
    if name == "sigmoid":
        return a * (1 - a)
    if name == "linear":
        return np.ones_like(c)
    raise ValueError(f"activation {name!r} not supported inside an LSTM")


def lstm_forward(x: np.ndarray, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray, act: str):
    """One direction over ``x`` of shape ``(batch, steps, n_in)``."""
    B, T, _ = x.shape
    u = Wh.shape[0]
    zx = (x.reshape(B * T, -1) @ Wx + b).reshape(B, T, 4 * u)
    h = np.zeros((B, u), dtype=x.dtype)
    c = np.zeros((B, u), dtype=x.dtype)
    H = np.empty((B, T, u), dtype=x.dtype)
    gates = np.empty((T, B, 4 * u), dtype=x.dtype)
    C = np.empty((T, B, u), dtype=x.dtype)
    A = np.empty((T, B, u), dtype=x.dtype)
    for t in range(T):
        z = zx[:, t] + h @ Wh
        g = gates[t]
        g[:, :3 * u] = sigmoid(z[:, :3 * u])
        g[:, 3 * u:] = np.tanh(z[:, 3 * u:])
        c = g[:, u:2 * u] * c + g[:, :u] * g[:, 3 * u:]
        C[t] = c
        A[t] = activate(act, c)
        h = g[:, 2 * u:3 * u] * A[t]
        H[:, t] = h
    return H, (x, H, gates, C, A)


def lstm_backward(dH: np.ndarray, cache, Wx: np.ndarray, Wh: np.ndarray, act: str):
    x, H, gates, C, A = cache
    B, T, n_in = x.shape
    u = Wh.shape[0]
    dZ = np.empty((B, T, 4 * u), dtype=x.dtype)
    dWh = np.zeros_like(Wh)
    dh_next = np.zeros((B, u), dtype=x.dtype)
    dc_next = np.zeros((B, u), dtype=x.dtype)
    zeros = np.zeros((B, u), dtype=x.dtype)
    WhT = Wh.T
    for t in range(T - 1, -1, -1):
        g = gates[t]
        i, f, o, cand = g[:, :u], g[:, u:2 * u], g[:, 2 * u:3 * u], g[:, 3 * u:]
        c_prev = C[t - 1] if t > 0 else zeros
        h_prev = H[:, t - 1] if t > 0 else zeros
        dh = dH[:, t] + dh_next
        dc = dc_next + dh * o * _cell_act_grad(act, C[t], A[t])
        dz = dZ[:, t]
        dz[:, :u] = dc * cand * i * (1 - i)
        dz[:, u:2 * u] = dc * c_prev * f * (1 - f)
        dz[:, 2 * u:3 * u] = dh * A[t] * o * (1 - o)
        dz[:, 3 * u:] = dc * i * (1 - cand * cand)
        dWh += h_prev.T @ dz
        dh_next = dz @ WhT
        dc_next = dc * f
    dZ2 = dZ.reshape(B * T, 4 * u)
    dWx = x.reshape(B * T, n_in).T @ dZ2
    db = dZ2.sum(axis=0)
    dx = (dZ2 @ Wx.T).reshape(B, T, n_in)
    return dx, dWx, dWh, db


def init_blstm_params(n_in: int, units: int, rng: np.random.Generator, dtype=np.float64) -> dict:
    params = {}
    for d in DIRECTIONS:
        params[f"Wx_{d}"] = glorot_uniform(rng, n_in, 4 * units, dtype=dtype)
        q, r = np.linalg.qr(rng.normal(size=(4 * units, units)))
        q = q * np.sign(np.diag(r))
        params[f"Wh_{d}"] = np.ascontiguousarray(q.T, dtype=dtype)
        b = np.zeros(4 * units, dtype=dtype)
        b[units:2 * units] = 1.0
        params[f"b_{d}"] = b
    return params


def _direction_task(args):
    x, Wx, Wh, b, act, reverse = args
    xin = x[:, ::-1] if reverse else x
    H, cache = lstm_forward(xin, Wx, Wh, b, act)
    return (H[:, ::-1] if reverse else H), cache


def blstm_forward(inputs: np.ndarray, params: dict, act: str = "tanh"):
    """Hidden states ``(batch, steps, 2 * units)``: forward half then backward half.

    The batch is cut into fixed-size shards; each (shard, direction) pair is an
    independent task so worker threads never change the arithmetic.
    """
    if inputs.ndim != 3:
        raise ShapeError(f"blstm expects (batch, steps, features), got {inputs.shape}")
    n_in = params["Wx_f"].shape[0]
    if inputs.shape[2] != n_in:
        raise ShapeError(f"blstm expects {n_in} input features, got {inputs.shape[2]}")
    bounds = shard_bounds(inputs.shape[0])
    tasks = [(inputs[a:z], params[f"Wx_{d}"], params[f"Wh_{d}"], params[f"b_{d}"], act, d == "b")
             for a, z in bounds for d in DIRECTIONS]
    results = map_ordered(_direction_task, tasks)
    halves = [np.concatenate([results[2 * k + j][0] for k in range(len(bounds))], axis=0)
              for j in range(2)]
    out = np.concatenate(halves, axis=2)
    cache = {
        "bounds": bounds,
        "caches": [r[1] for r in results],
        "act": act,
        "weights": {k: v.copy() for k, v in params.items()},
    }
    return out, cache


def _backward_task(args):
    dH, cache, Wx, Wh, act, reverse = args
    dHin = dH[:, ::-1] if reverse else dH
    dx, dWx, dWh, db = lstm_backward(dHin, cache, Wx, Wh, act)
    return (dx[:, ::-1] if reverse else dx), dWx, dWh, db


def blstm_backward(grad_out: np.ndarray, cache: dict, params: dict):
    for k, v in params.items():
        w = cache["weights"].get(k)
        if w is None or w.shape != v.shape or not np.array_equal(w, v):
            raise StaleCacheError(f"parameter {k!r} changed since the forward pass")
    u = params["Wh_f"].shape[0]
    act = cache["act"]
    tasks = []
    for s, (a, z) in enumerate(cache["bounds"]):
        for j, d in enumerate(DIRECTIONS):
            dH = grad_out[a:z, :, j * u:(j + 1) * u]
            tasks.append((dH, cache["caches"][2 * s + j], params[f"Wx_{d}"], params[f"Wh_{d}"], act, d == "b"))
    results = map_ordered(_backward_task, tasks)
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dx_parts = []
    for s in range(len(cache["bounds"])):
        dx = None
        for j, d in enumerate(DIRECTIONS):
            ddx, dWx, dWh, db = results[2 * s + j]
            dx = ddx if dx is None else dx + ddx
            grads[f"Wx_{d}"] += dWx
            grads[f"Wh_{d}"] += dWh
            grads[f"b_{d}"] += db
        dx_parts.append(dx)
    return np.concatenate(dx_parts, axis=0), grads


class BLSTM(Layer):
    kind = "blstm"

    def __init__(self, n_in: int, units: int, activation: str = "tanh",
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        if units < 1 or n_in < 1:
            raise ValueError("blstm widths must be positive")
        if activation not in ACTIVATIONS or activation == "softmax":
            raise ValueError(f"activation {activation!r} not supported inside an LSTM")
        self.n_in, self.units, self.activation = n_in, units, activation
        self.params = init_blstm_params(n_in, units, rng if rng is not None else np.random.default_rng(0), dtype)
        self.zero_grads()

    def forward(self, x, training=False):
        out, self._cache = blstm_forward(x, self.params, self.activation)
        return out

    def backward(self, dy):
        dx, self.grads = blstm_backward(dy, self._cache, self.params)
        return dx

    def output_shape(self, in_shape):
        return (in_shape[0], 2 * self.units)


class StateReduce(Layer):
    """Turn BLSTM hidden states into a fixed-width representation.

    ``aggregate``: last forward state and last backward state (which sits at
    step 0). ``full``: every hidden state, flattened.
    """
    kind = "state_reduce"

    def __init__(self, mode: str):
        super().__init__()
        if mode not in ("aggregate", "full"):
            raise ValueError(f"unknown reduction {mode!r}")
        self.mode = mode

    def forward(self, x, training=False):
        self._shape = x.shape
        if self.mode == "full":
            return x.reshape(x.shape[0], -1)
        u = x.shape[2] // 2
        return np.concatenate([x[:, -1, :u], x[:, 0, u:]], axis=1)

    def backward(self, dy):
        if self.mode == "full":
            return dy.reshape(self._shape)
        B, T, W = self._shape
        u = W // 2
        dx = np.zeros(self._shape, dtype=dy.dtype)
        dx[:, -1, :u] = dy[:, :u]
        dx[:, 0, u:] = dy[:, u:]
        return dx

    def output_shape(self, in_shape):
        T, W = in_shape
        return (T * W,) if self.mode == "full" else (W,)
