"""Feed-forward layers with explicit forward/backward passes.

Each layer keeps what its backward pass needs from the most recent forward
call. ``params`` holds trainable arrays, ``state`` holds non-trainable ones
(batch-norm running statistics), and ``grads`` mirrors ``params``.
"""
from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear", "softmax")


class ShapeError(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None, dtype=np.float64):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape or (fan_in, fan_out)).astype(dtype)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # Split by sign so exp never overflows.
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return sigmoid(z)
    if name == "linear":
        return z
    if name == "softmax":
        return softmax(z)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, z: np.ndarray, a: np.ndarray, da: np.ndarray) -> np.ndarray:
    """Backprop ``da`` through ``a = activate(name, z)``."""
    if name == "relu":
        return da * (z > 0)
    if name == "tanh":
        return da * (1 - a * a)
    if name == "sigmoid":
        return da * a * (1 - a)
    if name == "linear":
        return da
    if name == "softmax":
        return a * (da - (da * a).sum(axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {name!r}")


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.state: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.trainable = True

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def zero_grads(self):
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class Dense(Layer):
    kind = "dense"

    def __init__(self, n_in: int, n_out: int, activation: str = "linear",
                 rng: np.random.Generator | None = None, dtype=np.float64):
        super().__init__()
        if n_in < 1 or n_out < 1:
            raise ValueError("dense widths must be positive")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.params = {"W": glorot_uniform(rng, n_in, n_out, dtype=dtype),
                       "b": np.zeros(n_out, dtype=dtype)}
        self.zero_grads()

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense expects (batch, {self.n_in}), got {x.shape}")
        self._x = x
        self._z = x @ self.params["W"] + self.params["b"]
        self._a = activate(self.activation, self._z)
        return self._a

    def backward(self, dy):
        dz = activation_grad(self.activation, self._z, self._a, dy)
        self.grads["W"] = self._x.T @ dz
        self.grads["b"] = dz.sum(axis=0)
        return dz @ self.params["W"].T

    def output_shape(self, in_shape):
        return (self.n_out,)


class Activation(Layer):
    kind = "activation"

    def __init__(self, name: str):
        super().__init__()
        if name not in ACTIVATIONS:
            raise ValueError(f"unknown activation {name!r}")
        self.name = name

    def forward(self, x, training=False):
        self._z = x
        self._a = activate(self.name, x)
        return self._a

    def backward(self, dy):
        return activation_grad(self.name, self._z, self._a, dy)


class BatchNorm(Layer):
    """Per-feature normalization over the batch axis of a 2-d input."""
    kind = "batch_norm"

    def __init__(self, n_features: int, momentum: float = 0.99, eps: float = 1e-3, dtype=np.float64):
        super().__init__()
        self.n_features, self.momentum, self.eps = n_features, momentum, eps
        self.params = {"gamma": np.ones(n_features, dtype=dtype), "beta": np.zeros(n_features, dtype=dtype)}
        self.state = {"running_mean": np.zeros(n_features, dtype=dtype),
                      "running_var": np.ones(n_features, dtype=dtype)}
        self.zero_grads()

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ShapeError(f"batch_norm expects (batch, {self.n_features}), got {x.shape}")
        if training:
            if x.shape[0] < 2:
                raise ShapeError("batch statistics need a batch of at least 2")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.state["running_mean"] = (m * self.state["running_mean"] + (1 - m) * mean).astype(x.dtype)
            self.state["running_var"] = (m * self.state["running_var"] + (1 - m) * var).astype(x.dtype)
        else:
            mean, var = self.state["running_mean"], self.state["running_var"]
        self._training = training
        self._inv = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mean) * self._inv
        return self.params["gamma"] * self._xhat + self.params["beta"]

    def backward(self, dy):
        gamma = self.params["gamma"]
        self.grads["gamma"] = (dy * self._xhat).sum(axis=0)
        self.grads["beta"] = dy.sum(axis=0)
        dxhat = dy * gamma
        if not self._training:
            return dxhat * self._inv
        n = dy.shape[0]
        return (self._inv / n) * (n * dxhat - dxhat.sum(axis=0) - self._xhat * (dxhat * self._xhat).sum(axis=0))


class Dropout(Layer):
    """Inverted dropout, active only in training mode."""
    kind = "dropout"

    def __init__(self, rate: float, rng: np.random.Generator | None = None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._scale = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._scale = keep.astype(x.dtype) / (1.0 - self.rate)
        return x * self._scale

    def backward(self, dy):
        return dy if self._scale is None else dy * self._scale


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape: tuple[int, ...]):
        super().__init__()
        self.shape = tuple(shape)

    def forward(self, x, training=False):
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._in_shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {in_shape} to {self.shape}")
        return self.shape


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._in_shape)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class Sequential(Layer):
    kind = "sequential"

    def __init__(self, layers=()):
        super().__init__()
        self.layers: list[Layer] = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, dy):
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def output_shape(self, in_shape):
        for layer in self.layers:
            in_shape = layer.output_shape(in_shape)
        return in_shape

    def named_layers(self, prefix: str = ""):
        for i, layer in enumerate(self.layers):
            name = f"{prefix}{i}.{layer.kind}"
            if isinstance(layer, Sequential):
                yield from layer.named_layers(name + ".")
            else:
                yield name, layer
