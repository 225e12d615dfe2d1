"""Pieces shared by the pretraining and fine-tuning loops."""
from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass
from typing import Callable, Iterator, TextIO

import numpy as np


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss} at step {step}")
        self.step, self.loss = step, loss


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.patience < 0:
            raise ValueError(f"invalid training config {asdict(self)}")


def minibatches(n: int, batch_size: int, rng: np.random.Generator,
                min_size: int = 1) -> Iterator[np.ndarray]:
    """Shuffled index batches. A trailing batch smaller than ``min_size`` is
    merged into the previous one (batch statistics need at least two rows)."""
    order = rng.permutation(n)
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] < min_size:
        bounds.pop(-2)
    for a, b in zip(bounds[:-1], bounds[1:]):
        yield order[a:b]


class JsonLog:
    """JSON-lines training log, to a stream, a callback, or nowhere."""

    def __init__(self, sink: TextIO | Callable[[dict], None] | None = None):
        self.sink = sink
        self.records: list[dict] = []

    def __call__(self, **record):
        self.records.append(record)
        if self.sink is None:
            return
        if callable(self.sink) and not hasattr(self.sink, "write"):
            self.sink(record)
        else:
            self.sink.write(json.dumps(record, sort_keys=True) + "\n")
            self.sink.flush()


def stderr_log() -> JsonLog:
    return JsonLog(sys.stderr)


def snapshot(arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in arrays.items()}


def restore(arrays: dict[str, np.ndarray], saved: dict[str, np.ndarray]) -> None:
    for k, v in saved.items():
        arrays[k][...] = v
