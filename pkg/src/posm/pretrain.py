"""Encoder structures and masked-reconstruction pretraining.

An encoder is a stack of BLSTM layers whose top-layer hidden states are
reduced to a representation (``aggregate_state``: last forward and last
backward state; ``full_state``: all states flattened), followed by a
feed-forward head that predicts the window's x/y channels.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import featurize as fz
from .ink import Corpus, StrokeSet, concat_pen_down, pen_down_boundaries
from .nn import serialize
from .nn.blstm import BLSTM, StateReduce
from .nn.layers import BatchNorm, Layer
from .nn.losses import masked_mse, mse_loss
from .nn.optim import Adam
from .nn.spec import LayerSpec, build_stack, layers_to_text, parse_layers
from .training import JsonLog, TrainConfig, TrainingDiverged, minibatches, restore, snapshot

BLOCK_TYPES = ("aggregate_state", "full_state")
CHECKPOINT_FORMAT = "posm-encoder"


@dataclass(frozen=True)
class EncoderSpec:
    block_type: str = "full_state"
    features: fz.FeatureConfig = field(default_factory=fz.FeatureConfig)
    blstm_layers: tuple[LayerSpec, ...] = tuple(parse_layers("32*relu + 32*relu + 32*relu", "blstm"))
    head_layers: tuple[LayerSpec, ...] = tuple(parse_layers("BN + 256*relu + 64*relu + reshape(32,2)"))
    windowing: fz.WindowingConfig = field(default_factory=fz.WindowingConfig)
    masking: fz.MaskingConfig = field(default_factory=fz.MaskingConfig)

    def __post_init__(self):
        if self.block_type not in BLOCK_TYPES:
            raise ValueError(f"unknown block type {self.block_type!r}")
        object.__setattr__(self, "blstm_layers", tuple(self.blstm_layers))
        object.__setattr__(self, "head_layers", tuple(self.head_layers))
        if not any(s.kind == "blstm" for s in self.blstm_layers):
            raise ValueError("encoder needs at least one blstm layer")
        if any(s.kind not in ("blstm", "dropout") for s in self.blstm_layers):
            raise ValueError("the recurrent stack may only hold blstm and dropout layers")
        last = self.head_layers[-1] if self.head_layers else None
        if last is None or last.kind != "reshape" or last.shape != (self.windowing.w_size, 2):
            raise ValueError(f"head must end in reshape({self.windowing.w_size},2)")
        self.features.target_columns()

    @property
    def units(self) -> list[int]:
        return [s.width for s in self.blstm_layers if s.kind == "blstm"]

    @property
    def representation_width(self) -> int:
        top = 2 * self.units[-1]
        return top if self.block_type == "aggregate_state" else self.windowing.w_size * top

    def to_dict(self) -> dict:
        return {
            "block_type": self.block_type,
            "features": list(self.features.features),
            "blstm_layers": layers_to_text(list(self.blstm_layers)),
            "head_layers": layers_to_text(list(self.head_layers)),
            "w_size": self.windowing.w_size,
            "shift": self.windowing.shift,
            "f_mask": self.masking.f_mask,
            "m_views": self.masking.m_views,
            "per_feature_mask_prob": self.masking.per_feature_mask_prob,
            "mask_value": self.masking.mask_value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(
            block_type=d["block_type"],
            features=fz.FeatureConfig(tuple(d["features"])),
            blstm_layers=tuple(parse_layers(d["blstm_layers"], "blstm")),
            head_layers=tuple(parse_layers(d["head_layers"])),
            windowing=fz.WindowingConfig(d["w_size"], d["shift"]),
            masking=fz.MaskingConfig(d["f_mask"], d["m_views"], d["per_feature_mask_prob"], d["mask_value"]),
        )


def reduction_mode(block_type: str) -> str:
    return "aggregate" if block_type == "aggregate_state" else "full"


class Encoder:
    """Runnable network for an ``EncoderSpec``."""

    def __init__(self, spec: EncoderSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        w = spec.windowing.w_size
        self.stack, shape = build_stack(list(spec.blstm_layers), (w, spec.features.n_features), rng, dtype)
        self.reduce = StateReduce(reduction_mode(spec.block_type))
        shape = self.reduce.output_shape(shape)
        self.head, shape = build_stack(list(spec.head_layers), shape, rng, dtype)
        if shape != (w, 2):
            raise ValueError(f"head produces {shape}, expected {(w, 2)}")

    # parameter bookkeeping -------------------------------------------------
    def named_layers(self) -> list[tuple[str, Layer]]:
        out = []
        k = 0
        for layer in self.stack:
            if isinstance(layer, BLSTM):
                out.append((f"blstm{k}", layer))
                k += 1
        out += [(f"head{i}.{layer.kind}", layer) for i, layer in enumerate(self.head) if layer.params]
        return out

    def blstm_layers(self) -> list[BLSTM]:
        return [layer for layer in self.stack if isinstance(layer, BLSTM)]

    def params(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.named_layers() for k, v in layer.params.items()}

    def grads(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": layer.grads[k] for n, layer in self.named_layers() for k in layer.params}

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for n, layer in self.named_layers():
            out.update({f"{n}.{k}": v for k, v in layer.params.items()})
            out.update({f"{n}.{k}": v for k, v in layer.state.items()})
        return out

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        mine = self.tensors()
        serialize.check_shapes(tensors, {k: v.shape for k, v in mine.items()})
        for n, layer in self.named_layers():
            for store in (layer.params, layer.state):
                for k in store:
                    store[k] = np.array(tensors[f"{n}.{k}"], dtype=self.dtype)

    # computation -----------------------------------------------------------
    def _check_input(self, x: np.ndarray) -> np.ndarray:
        w = self.spec.windowing.w_size
        nf = self.spec.features.n_features
        if x.ndim != 3 or x.shape[1:] != (w, nf):
            raise ValueError(f"expected windows of shape (batch, {w}, {nf}), got {x.shape}")
        return np.asarray(x, dtype=self.dtype)

    def hidden_states(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        h = self._check_input(x)
        for layer in self.stack:
            h = layer.forward(h, training)
        return h

    def encode(self, x: np.ndarray) -> np.ndarray:
        return self.reduce.forward(self.hidden_states(x, False))

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        h = self.reduce.forward(self.hidden_states(x, training))
        for layer in self.head:
            h = layer.forward(h, training)
        return h

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.head):
            dy = layer.backward(dy)
        dy = self.reduce.backward(dy)
        for layer in reversed(self.stack):
            dy = layer.backward(dy)
        return dy

    def reconstruct(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = self._check_input(x)
        if len(x) == 0:
            return np.zeros((0, self.spec.windowing.w_size, 2), dtype=self.dtype)
        return np.concatenate([self.forward(x[a:a + batch_size], False)
                               for a in range(0, len(x), batch_size)])


def encode(encoder: Encoder, windows: np.ndarray) -> np.ndarray:
    return encoder.encode(windows)


def reconstruct(encoder: Encoder, masked: np.ndarray) -> np.ndarray:
    return encoder.reconstruct(masked)


# data --------------------------------------------------------------------------


@dataclass
class MaskedSet:
    inputs: np.ndarray  # (n, w, features), mask value in masked cells
    masks: np.ndarray  # (n, w, features) bool
    targets: np.ndarray  # (n, w, 2)
    block_starts: np.ndarray  # (n,)
    block_len: int
    sources: list[tuple[str, int]]

    def __len__(self) -> int:
        return len(self.inputs)

    def block_region(self) -> np.ndarray:
        """(n, w, 1) bool: timesteps inside each view's masked block."""
        w = self.inputs.shape[1]
        steps = np.arange(w)[None, :]
        inside = (steps >= self.block_starts[:, None]) & (steps < self.block_starts[:, None] + self.block_len)
        return inside[:, :, None]

    def take(self, idx) -> "MaskedSet":
        return MaskedSet(self.inputs[idx], self.masks[idx], self.targets[idx], self.block_starts[idx],
                         self.block_len, [self.sources[i] for i in np.atleast_1d(idx)])


def strokeset_windows(ss: StrokeSet, fcfg: fz.FeatureConfig, wcfg: fz.WindowingConfig) -> list[fz.Window]:
    return fz.windows_for_sequence(concat_pen_down(ss), fcfg, wcfg, ss.id, pen_down_boundaries(ss))


def masked_views_for(strokesets: Iterable[StrokeSet], spec: EncoderSpec, seed: int,
                     drop_crossing: bool = False) -> MaskedSet:
    """Masked views of every window, with one random stream per strokeset."""
    fcfg, wcfg, mcfg = spec.features, spec.windowing, spec.masking
    cols = fcfg.target_columns()
    views: list[fz.MaskedWindow] = []
    for ss in strokesets:
        try:
            wins = strokeset_windows(ss, fcfg, wcfg)
        except fz.SequenceTooShort:
            continue
        rng = fz.strokeset_rng(seed, ss.id)
        for w in wins:
            if drop_crossing and w.crosses_stroke:
                continue
            views.extend(fz.mask_views(w, mcfg, rng, cols))
    w, nf = wcfg.w_size, fcfg.n_features
    if not views:
        return MaskedSet(np.zeros((0, w, nf), np.float32), np.zeros((0, w, nf), bool),
                         np.zeros((0, w, 2), np.float32), np.zeros(0, np.int64),
                         mcfg.block_len(w), [])
    x, m, t = fz.stack_masked(views)
    return MaskedSet(x.astype(np.float32), m, t.astype(np.float32),
                     np.array([v.block_start for v in views]), views[0].block_len,
                     [v.source for v in views])


def save_masked_set(path, ms: MaskedSet, spec: EncoderSpec) -> None:
    serialize.save(path, {
        "inputs": ms.inputs, "masks": ms.masks.astype(np.float32), "targets": ms.targets,
        "block_starts": ms.block_starts.astype(np.float32),
    }, {"format": "posm-masked-set", "spec": spec.to_dict(), "block_len": ms.block_len,
        "sources": [list(s) for s in ms.sources]})


def load_masked_set(path) -> tuple[MaskedSet, EncoderSpec]:
    t, meta = serialize.load(path)
    if meta.get("format") != "posm-masked-set":
        raise serialize.ContainerError(f"{path}: not a masked-window set")
    ms = MaskedSet(t["inputs"], t["masks"] > 0.5, t["targets"], t["block_starts"].astype(np.int64),
                   int(meta["block_len"]), [tuple(s) for s in meta["sources"]])
    return ms, EncoderSpec.from_dict(meta["spec"])


def split_for_validation(strokesets: Sequence[StrokeSet], fraction: float, seed: int
                         ) -> tuple[list[StrokeSet], list[StrokeSet]]:
    """Hold out ``fraction`` of strokesets (at least one when there are two or more)."""
    n = len(strokesets)
    n_val = int(round(fraction * n))
    if fraction > 0 and n >= 2:
        n_val = max(1, n_val)
    n_val = min(n_val, n - 1)
    order = np.random.default_rng(seed).permutation(n)
    val = set(order[:n_val].tolist())
    return ([s for i, s in enumerate(strokesets) if i not in val],
            [s for i, s in enumerate(strokesets) if i in val])


# training ---------------------------------------------------------------------


@dataclass
class TrainingRecord:
    epochs: int
    best_epoch: int
    best_val_mse: float
    seed: int
    steps: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class EncoderCheckpoint:
    spec: EncoderSpec
    encoder: Encoder
    record: TrainingRecord | None = None

    @property
    def params(self) -> dict[str, np.ndarray]:
        return self.encoder.tensors()


def evaluate_mse(encoder: Encoder, ms: MaskedSet, batch_size: int = 256) -> dict:
    if len(ms) == 0:
        raise ValueError("empty evaluation set")
    pred = encoder.reconstruct(ms.inputs, batch_size)
    whole = float(np.mean(np.square(pred - ms.targets, dtype=np.float64)))
    return {"mse": whole, "masked_mse": masked_mse(pred, ms.targets, ms.block_region())}


def pretrain(corpus: Corpus, spec: EncoderSpec, cfg: TrainConfig, val_fraction: float = 0.1,
             log: JsonLog | None = None, init: Encoder | None = None) -> EncoderCheckpoint:
    """Train an encoder to reconstruct whole windows from masked views.

    Uses the corpus ``pretrain`` split; a per-strokeset holdout of it drives
    early stopping on whole-window MSE. The best epoch's weights are returned.
    """
    pool = corpus.split("pretrain")
    if not pool:
        raise ValueError("corpus has an empty pretrain split")
    train_ss, val_ss = split_for_validation(pool, val_fraction, cfg.seed)
    train = masked_views_for(train_ss, spec, cfg.seed)
    val = masked_views_for(val_ss, spec, cfg.seed) if val_ss else train
    if len(train) == 0:
        raise ValueError("pretrain split yields no windows (sequences shorter than w_size)")
    return fit_encoder(train, val, spec, cfg, log, init)


def fit_encoder(train: MaskedSet, val: MaskedSet, spec: EncoderSpec, cfg: TrainConfig,
                log: JsonLog | None = None, init: Encoder | None = None) -> EncoderCheckpoint:
    log = log or JsonLog()
    enc = init if init is not None else Encoder(spec, seed=cfg.seed)
    params, grads = enc.params(), None
    opt = Adam(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 1])
    has_bn = any(isinstance(layer, BatchNorm) for layer in enc.head)

    best = evaluate_mse(enc, val)
    best_state, best_epoch, bad_epochs, step = snapshot(enc.tensors()), 0, 0, 0
    log(event="init", step=0, epoch=0, val_mse=best["mse"], val_masked_mse=best["masked_mse"])
    epochs_run = 0
    for epoch in range(1, cfg.epochs + 1):
        epochs_run = epoch
        total, count = 0.0, 0
        for idx in minibatches(len(train), cfg.batch_size, rng, 2 if has_bn else 1):
            pred = enc.forward(train.inputs[idx], training=True)
            loss, dpred = mse_loss(pred, train.targets[idx])
            step += 1
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            enc.backward(dpred.astype(enc.dtype))
            grads = enc.grads()
            opt.step(params, grads)
            total += loss * len(idx)
            count += len(idx)
        res = evaluate_mse(enc, val)
        if not np.isfinite(res["mse"]):
            raise TrainingDiverged(step, res["mse"])
        log(event="epoch", step=step, epoch=epoch, train_mse=total / count,
            val_mse=res["mse"], val_masked_mse=res["masked_mse"])
        if res["mse"] < best["mse"]:
            best, best_epoch, bad_epochs = res, epoch, 0
            best_state = snapshot(enc.tensors())
        else:
            bad_epochs += 1
            if bad_epochs > cfg.patience:
                break
    restore(enc.tensors(), best_state)
    record = TrainingRecord(epochs_run, best_epoch, best["mse"], cfg.seed, step)
    return EncoderCheckpoint(spec, enc, record)


# checkpoints --------------------------------------------------------------------


def checkpoint_bytes(ckpt: EncoderCheckpoint) -> bytes:
    meta = {"format": CHECKPOINT_FORMAT, "spec": ckpt.spec.to_dict(),
            "record": ckpt.record.to_dict() if ckpt.record else None}
    return serialize.dumps(ckpt.encoder.tensors(), meta)


def save_checkpoint(path, ckpt: EncoderCheckpoint) -> None:
    serialize.atomic_write(path, checkpoint_bytes(ckpt))


def checkpoint_from_bytes(data: bytes, spec_override: EncoderSpec | None = None) -> EncoderCheckpoint:
    tensors, meta = serialize.loads(data)
    if meta.get("format") != CHECKPOINT_FORMAT:
        raise serialize.ContainerError(f"not an encoder checkpoint (format {meta.get('format')!r})")
    spec = spec_override or EncoderSpec.from_dict(meta["spec"])
    enc = Encoder(spec, seed=0)
    enc.load_tensors(tensors)
    rec = meta.get("record")
    return EncoderCheckpoint(spec, enc, TrainingRecord(**rec) if rec else None)


def load_checkpoint(path, spec_override: EncoderSpec | None = None) -> EncoderCheckpoint:
    return checkpoint_from_bytes(Path(path).read_bytes(), spec_override)


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def untrained_checkpoint(spec: EncoderSpec, seed: int = 0) -> EncoderCheckpoint:
    return EncoderCheckpoint(spec, Encoder(spec, seed=seed), None)


def with_windowing(spec: EncoderSpec, shift: int) -> EncoderSpec:
    return replace(spec, windowing=fz.WindowingConfig(spec.windowing.w_size, shift))
