"""Central-difference gradient checking for any ``Layer``."""
from __future__ import annotations

import copy

import numpy as np

from .layers import Layer


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        grad[idx] = (fp - fm) / (2 * h)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``, zero when both vanish."""
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def grad_check(layer: Layer, input_shape: tuple[int, ...], seed: int = 0, training: bool = False,
               h: float = 1e-5, x: np.ndarray | None = None) -> float:
    """Worst relative error between analytic and numeric gradients.

    The scalar objective is ``sum(R * layer(x))`` for a fixed random ``R``;
    every parameter and the input are checked. A layer with its own random
    generator (dropout) is replayed from the same generator state on every
    evaluation.
    """
    rng = np.random.default_rng(seed)
    if x is None:
        x = rng.uniform(-1.0, 1.0, input_shape)
    x = np.array(x, dtype=np.float64)
    rng_state = copy.deepcopy(layer.rng.bit_generator.state) if hasattr(layer, "rng") else None

    def run(inp):
        if rng_state is not None:
            layer.rng.bit_generator.state = copy.deepcopy(rng_state)
        return layer.forward(inp, training)

    R = rng.normal(size=run(x).shape)

    def objective():
        return float(np.sum(R * run(x)))

    run(x)
    dx = layer.backward(R)
    analytic = {k: v.copy() for k, v in layer.grads.items()}
    worst = relative_error(dx, numeric_grad(objective, x, h))
    for name, p in layer.params.items():
        worst = max(worst, relative_error(analytic[name], numeric_grad(objective, p, h)))
    return worst
