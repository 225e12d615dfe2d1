"""Classifiers over a pretrained encoder, their training, and soft-voting inference.

The Exclusive network classifies one window at a time. The Inclusive network
takes a chain of ``n_windows`` consecutive windows, encodes each with the
pretrained block, and treats the per-window representations as a sequence.
Either network can put an optional BLSTM block on top before the dense head.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import featurize as fz
from .metrics import EvalReport, classification_metrics
from .nn import serialize
from .nn.blstm import BLSTM, StateReduce
from .nn.layers import BatchNorm, Dense, Dropout, Layer
from .nn.losses import cross_entropy_from_logits, output_probs
from .nn.optim import Adam
from .nn.spec import LayerSpec, build_stack, layers_to_text, parse_layers
from .pretrain import EncoderCheckpoint, EncoderSpec, reduction_mode
from .training import JsonLog, TrainConfig, TrainingDiverged, minibatches, restore, snapshot

PIPELINES = ("exclusive", "inclusive")
OPTIONAL_BLOCKS = ("aggregate_state", "full_state", "none")
TRAINABLE = ("none", "first", "second", "all")
MODEL_FORMAT = "posm-classifier"
DEFAULT_CHAIN = 20


@dataclass(frozen=True)
class FreezePlan:
    n_layers_kept: int = 2
    trainable: str = "none"

    def __post_init__(self):
        if self.trainable not in TRAINABLE:
            raise ValueError(f"trainable must be one of {TRAINABLE}")
        if self.n_layers_kept < 1:
            raise ValueError("keep at least one pretrained BLSTM layer")
        idx = self.trainable_index
        if idx is not None and idx > self.n_layers_kept:
            raise ValueError(f"cannot train layer {idx} when only {self.n_layers_kept} are kept")

    @property
    def trainable_index(self) -> int | None:
        return {"first": 1, "second": 2}.get(self.trainable)

    def is_trainable(self, layer_number: int) -> bool:
        """``layer_number`` counts kept BLSTM layers from the bottom, starting at 1."""
        return self.trainable == "all" or self.trainable_index == layer_number

    def check(self, n_available: int) -> None:
        if self.n_layers_kept > n_available:
            raise ValueError(f"plan keeps {self.n_layers_kept} layers, checkpoint has {n_available}")


@dataclass(frozen=True)
class ClassifierSpec:
    pipeline: str = "exclusive"
    n_windows: int = 0  # 0 picks the pipeline default
    optional_blstm: tuple[LayerSpec, ...] = ()
    optional_block: str = "none"
    head_layers: tuple[LayerSpec, ...] = tuple(parse_layers("32*relu + 2*softmax"))
    loss: str = ""

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ValueError(f"pipeline must be one of {PIPELINES}")
        if self.optional_block not in OPTIONAL_BLOCKS:
            raise ValueError(f"optional_block must be one of {OPTIONAL_BLOCKS}")
        object.__setattr__(self, "optional_blstm", tuple(self.optional_blstm))
        object.__setattr__(self, "head_layers", tuple(self.head_layers))
        if self.n_windows == 0:
            object.__setattr__(self, "n_windows", 1 if self.pipeline == "exclusive" else DEFAULT_CHAIN)
        if self.pipeline == "exclusive" and self.n_windows != 1:
            raise ValueError("the exclusive pipeline takes exactly one window")
        if self.n_windows < 1:
            raise ValueError("n_windows must be positive")
        has_blstm = any(s.kind == "blstm" for s in self.optional_blstm)
        if any(s.kind not in ("blstm", "dropout") for s in self.optional_blstm):
            raise ValueError("the optional block may only hold blstm and dropout layers")
        if has_blstm != (self.optional_block != "none"):
            raise ValueError("optional_block needs optional BLSTM layers, and vice versa")
        if not self.head_layers or self.head_layers[-1].kind != "dense" \
                or self.head_layers[-1].activation not in ("softmax", "sigmoid"):
            raise ValueError("the head must end in a softmax or sigmoid dense layer")
        implied = "categorical_ce" if self.head_layers[-1].activation == "softmax" else "binary_ce"
        if not self.loss:
            object.__setattr__(self, "loss", implied)
        elif self.loss != implied:
            raise ValueError(f"loss {self.loss!r} does not match a {self.head_layers[-1].activation} output")

    @property
    def ce_kind(self) -> str:
        return "categorical" if self.loss == "categorical_ce" else "binary"

    def to_dict(self) -> dict:
        return {"pipeline": self.pipeline, "n_windows": self.n_windows,
                "optional_blstm": layers_to_text(list(self.optional_blstm)),
                "optional_block": self.optional_block,
                "head_layers": layers_to_text(list(self.head_layers)), "loss": self.loss}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierSpec":
        return cls(d["pipeline"], int(d["n_windows"]), tuple(parse_layers(d["optional_blstm"], "blstm")),
                   d["optional_block"], tuple(parse_layers(d["head_layers"])), d.get("loss", ""))


# Named structures: (pipeline, optional BLSTM stack, optional block, head).
# The width of the last head layer is always replaced by the vocabulary size.
PRESETS = {
    "Inc20.agg20.FC_1": ("inclusive", "20*tanh + dropout(0.1)", "aggregate_state",
                         "20*linear + BN + dropout(0.2) + 2*sigmoid"),
    "Inc20.agg20.FC_2": ("inclusive", "20*tanh", "aggregate_state", "20*linear + BN + 2*sigmoid"),
    "Inc20.full20.FC": ("inclusive", "20*tanh + dropout(0.1)", "full_state",
                        "20*linear + BN + dropout(0.2) + 2*sigmoid"),
    "Inc20.FC": ("inclusive", "-", "none", "flatten + 20*relu + 20*relu + 2*sigmoid"),
    "Exc.agg32.FC": ("exclusive", "32*tanh", "aggregate_state", "32*relu + 2*sigmoid"),
    "Exc.full32.FC": ("exclusive", "32*relu + dropout(0.1)", "full_state", "BN + 222*relu + 222*sigmoid"),
    "Exc.full16.FC": ("exclusive", "16*relu", "full_state", "BN + 222*relu + 222*sigmoid"),
}


def preset(name: str, n_windows: int = 0) -> ClassifierSpec:
    try:
        pipeline, opt, block, head = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown classifier preset {name!r}; choose from {sorted(PRESETS)}") from None
    return ClassifierSpec(pipeline, n_windows, tuple(parse_layers(opt, "blstm")), block,
                          tuple(parse_layers(head)))


def kept_stack(spec: EncoderSpec, n_layers: int) -> list[LayerSpec]:
    """Bottom ``n_layers`` BLSTM layers of the encoder, with their trailing dropout."""
    out, seen = [], 0
    for s in spec.blstm_layers:
        if s.kind == "blstm":
            if seen == n_layers:
                break
            seen += 1
        out.append(s)
    return out


class Classifier:
    def __init__(self, encoder_spec: EncoderSpec, cspec: ClassifierSpec, plan: FreezePlan,
                 labels: Sequence[str], seed: int = 0, dtype=np.float32):
        plan.check(len(encoder_spec.units))
        if len(labels) < 2:
            raise ValueError("need at least two classes")
        self.encoder_spec, self.cspec, self.plan = encoder_spec, cspec, plan
        self.labels = list(labels)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        w, nf = encoder_spec.windowing.w_size, encoder_spec.features.n_features

        self.enc_stack, shape = build_stack(kept_stack(encoder_spec, plan.n_layers_kept), (w, nf), rng, dtype)
        self.enc_reduce = StateReduce(reduction_mode(encoder_spec.block_type))
        if cspec.pipeline == "inclusive":
            shape = (cspec.n_windows, int(np.prod(self.enc_reduce.output_shape(shape))))
        if cspec.optional_block != "none":
            self.opt_stack, shape = build_stack(list(cspec.optional_blstm), shape, rng, dtype)
            self.opt_reduce = StateReduce(reduction_mode(cspec.optional_block))
            shape = self.opt_reduce.output_shape(shape)
        else:
            self.opt_stack, self.opt_reduce = [], None
            shape = (int(np.prod(self.enc_reduce.output_shape(shape) if cspec.pipeline == "exclusive"
                                 else shape)),)
        self.representation_width = shape[0]
        head = list(cspec.head_layers)
        out = head[-1]
        head[-1] = LayerSpec("dense", len(self.labels), "linear")
        try:
            self.head, shape = build_stack(head, shape, rng, dtype)
        except ValueError as exc:
            raise ValueError(f"head does not fit the {self.representation_width}-wide representation: {exc}")
        self.output_activation = out.activation

        self._blstm_names = []
        k = 0
        for layer in self.enc_stack:
            if isinstance(layer, BLSTM):
                k += 1
                layer.trainable = plan.is_trainable(k)
                self._blstm_names.append((f"enc.blstm{k}", layer))

    # parameter bookkeeping -------------------------------------------------
    def named_layers(self) -> list[tuple[str, Layer]]:
        out = list(self._blstm_names)
        k = 0
        for layer in self.opt_stack:
            if isinstance(layer, BLSTM):
                k += 1
                out.append((f"opt.blstm{k}", layer))
        out += [(f"head{i}.{layer.kind}", layer) for i, layer in enumerate(self.head) if layer.params]
        return out

    def tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for n, layer in self.named_layers():
            out.update({f"{n}.{k}": v for k, v in layer.params.items()})
            out.update({f"{n}.{k}": v for k, v in layer.state.items()})
        return out

    def trainable_params(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": v for n, layer in self.named_layers() if layer.trainable
                for k, v in layer.params.items()}

    def trainable_grads(self) -> dict[str, np.ndarray]:
        return {f"{n}.{k}": layer.grads[k] for n, layer in self.named_layers() if layer.trainable
                for k in layer.params}

    def frozen_tensors(self) -> dict[str, np.ndarray]:
        trainable = set(self.trainable_params())
        return {k: v for k, v in self.tensors().items() if k not in trainable and k.startswith("enc.")}

    def load_tensors(self, tensors: dict[str, np.ndarray], strict: bool = True) -> None:
        mine = self.tensors()
        if strict:
            serialize.check_shapes(tensors, {k: v.shape for k, v in mine.items()})
        for n, layer in self.named_layers():
            for store in (layer.params, layer.state):
                for k in store:
                    key = f"{n}.{k}"
                    if key in tensors:
                        if tuple(tensors[key].shape) != store[k].shape:
                            raise serialize.ContainerError(
                                f"shape mismatch for tensor {key!r}: {tuple(tensors[key].shape)} vs {store[k].shape}")
                        store[k] = np.array(tensors[key], dtype=self.dtype)

    def load_encoder(self, ckpt: EncoderCheckpoint) -> None:
        """Copy the kept BLSTM layers' weights from a pretrained checkpoint."""
        src = ckpt.encoder.blstm_layers()
        for k, (name, layer) in enumerate(self._blstm_names):
            for p in layer.params:
                if src[k].params[p].shape != layer.params[p].shape:
                    raise serialize.ContainerError(f"shape mismatch for {name}.{p}")
                layer.params[p] = np.array(src[k].params[p], dtype=self.dtype)

    # computation -----------------------------------------------------------
    def frozen_prefix(self) -> int:
        """Leading encoder layers that are frozen and deterministic, so their
        outputs can be computed once and reused across epochs."""
        n = 0
        for layer in self.enc_stack:
            if isinstance(layer, Dropout) or layer.trainable:
                break
            n += 1
        return n

    def _windows_shape(self, x: np.ndarray) -> np.ndarray:
        w, nf = self.encoder_spec.windowing.w_size, self.encoder_spec.features.n_features
        want = (w, nf) if self.cspec.pipeline == "exclusive" else (self.cspec.n_windows, w, nf)
        if tuple(x.shape[1:]) != want:
            raise ValueError(f"expected input of shape (batch, {', '.join(map(str, want))}), got {x.shape}")
        return np.asarray(x, dtype=self.dtype)

    def precompute(self, x: np.ndarray, upto: int | None = None, batch_size: int = 256) -> np.ndarray:
        """Outputs of the first ``upto`` encoder layers (inference mode)."""
        x = self._windows_shape(x)
        upto = self.frozen_prefix() if upto is None else upto
        if upto == 0:
            return x
        lead = x.shape[:-2]
        flat = x.reshape((-1,) + x.shape[-2:])
        parts = []
        for a in range(0, len(flat), batch_size):
            h = flat[a:a + batch_size]
            for layer in self.enc_stack[:upto]:
                h = layer.forward(h, False)
            parts.append(h)
        h = np.concatenate(parts) if parts else np.zeros((0,) + flat.shape[1:], self.dtype)
        return h.reshape(lead + h.shape[1:])

    def logits(self, z: np.ndarray, training: bool = False, start: int = 0) -> np.ndarray:
        """Forward from the output of encoder layer ``start`` to the pre-activation outputs."""
        self._lead = z.shape[:-2]
        h = z.reshape((-1,) + z.shape[-2:])
        for layer in self.enc_stack[start:]:
            h = layer.forward(h, training)
        self._start = start
        if self.cspec.pipeline == "inclusive":
            h = self.enc_reduce.forward(h)
            self._rep_shape = h.shape
            h = h.reshape(self._lead + (h.shape[-1],))
            if self.opt_reduce is not None:
                for layer in self.opt_stack:
                    h = layer.forward(h, training)
                h = self.opt_reduce.forward(h)
            else:
                h = h.reshape(h.shape[0], -1)
        elif self.opt_reduce is not None:
            for layer in self.opt_stack:
                h = layer.forward(h, training)
            h = self.opt_reduce.forward(h)
        else:
            h = self.enc_reduce.forward(h)
        for layer in self.head:
            h = layer.forward(h, training)
        return h

    def backward(self, dlogits: np.ndarray) -> None:
        d = dlogits
        for layer in reversed(self.head):
            d = layer.backward(d)
        need_encoder = any(layer.trainable for layer in self.enc_stack[self._start:] if layer.params)
        if self.cspec.pipeline == "inclusive":
            if self.opt_reduce is not None:
                d = self.opt_reduce.backward(d)
                for layer in reversed(self.opt_stack):
                    d = layer.backward(d)
            if not need_encoder:
                return
            d = d.reshape(self._rep_shape)
            d = self.enc_reduce.backward(d)
        elif self.opt_reduce is not None:
            d = self.opt_reduce.backward(d)
            for layer in reversed(self.opt_stack):
                d = layer.backward(d)
        else:
            if not need_encoder:
                return
            d = self.enc_reduce.backward(d)
        if not need_encoder:
            return
        lowest = min(i for i, layer in enumerate(self.enc_stack) if layer.trainable and layer.params)
        for i in range(len(self.enc_stack) - 1, max(self._start, lowest) - 1, -1):
            d = self.enc_stack[i].backward(d)

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = self._windows_shape(x)
        parts = [output_probs(self.logits(x[a:a + batch_size], False), self.cspec.ce_kind)
                 for a in range(0, len(x), batch_size)]
        return np.concatenate(parts) if parts else np.zeros((0, len(self.labels)), self.dtype)


@dataclass
class FineTunedModel:
    classifier: Classifier
    encoder_ref: dict = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)

    @property
    def labels(self) -> list[str]:
        return self.classifier.labels

    @property
    def spec(self) -> ClassifierSpec:
        return self.classifier.cspec

    @property
    def plan(self) -> FreezePlan:
        return self.classifier.plan


def assemble(ckpt: EncoderCheckpoint, cspec: ClassifierSpec, plan: FreezePlan, labels: Sequence[str],
             seed: int = 0, pretrained: bool = True) -> FineTunedModel:
    """Classifier with the checkpoint's bottom layers (``pretrained=False`` keeps
    the same structure but random encoder weights)."""
    clf = Classifier(ckpt.spec, cspec, plan, labels, seed=seed)
    if pretrained:
        clf.load_encoder(ckpt)
    return FineTunedModel(clf, {"pretrained": pretrained})


# data ---------------------------------------------------------------------------


@dataclass
class LabeledData:
    """Exclusive: ``x`` is (n, w, f). Inclusive: ``x`` is (n, n_windows, w, f)."""
    x: np.ndarray
    y: np.ndarray

    def __len__(self) -> int:
        return len(self.y)


def exclusive_train_data(seqs: Sequence[fz.LabeledSequence], spec: EncoderSpec, s_train: int) -> LabeledData:
    wcfg = fz.WindowingConfig(spec.windowing.w_size, s_train)
    pairs, _ = fz.build_exclusive_train(seqs, spec.features, wcfg)
    return _pairs_to_data([w.values for w, _ in pairs], [y for _, y in pairs], spec)


def inclusive_train_data(seqs: Sequence[fz.LabeledSequence], spec: EncoderSpec, n_windows: int,
                         s_train: int) -> LabeledData:
    wcfg = fz.WindowingConfig(spec.windowing.w_size, s_train)
    chains, _ = fz.build_inclusive_chains(seqs, n_windows, spec.features, wcfg)
    return _pairs_to_data([c.values for c in chains], [c.label for c in chains], spec, n_windows)


def _pairs_to_data(values, labels, spec: EncoderSpec, n_windows: int | None = None) -> LabeledData:
    w, nf = spec.windowing.w_size, spec.features.n_features
    shape = (0, w, nf) if n_windows is None else (0, n_windows, w, nf)
    x = np.stack(values).astype(np.float32) if values else np.zeros(shape, np.float32)
    return LabeledData(x, np.asarray(labels, dtype=np.int64))


def test_arrays(seqs: Sequence[fz.LabeledSequence], spec: EncoderSpec, cspec: ClassifierSpec,
                s_test: int) -> list[tuple[np.ndarray, int]]:
    """One stacked array of windows (or chains) per sequence, with its label."""
    wcfg = fz.WindowingConfig(spec.windowing.w_size, s_test)
    if cspec.pipeline == "exclusive":
        arrays, _ = fz.build_test_arrays(seqs, spec.features, wcfg)
        return [(np.stack([w.values for w in wins]).astype(np.float32), y) for wins, y in arrays]
    arrays, _ = fz.build_chain_arrays(seqs, cspec.n_windows, spec.features, wcfg)
    return [(np.stack([c.values for c in chains]).astype(np.float32), y) for chains, y in arrays]


# inference ----------------------------------------------------------------------


def soft_vote(distributions: np.ndarray) -> tuple[int, np.ndarray]:
    """Argmax of the summed per-window outputs (lowest index wins ties) and the
    summed vector normalized to sum to one."""
    d = np.asarray(distributions, dtype=np.float64)
    if d.ndim != 2 or len(d) == 0:
        raise ValueError("soft voting needs a non-empty (windows, classes) array")
    total = d.sum(axis=0)
    s = total.sum()
    return int(np.argmax(total)), (total / s if s > 0 else total)


def soft_vote_predict(model: FineTunedModel, array: np.ndarray) -> tuple[int, np.ndarray]:
    if len(array) == 0:
        raise ValueError("empty window array")
    return soft_vote(model.classifier.predict_proba(array))


def predict_arrays(model: FineTunedModel, arrays: Sequence[tuple[np.ndarray, int]]
                   ) -> tuple[list[int], list[int], list[np.ndarray]]:
    y_true, y_pred, scores = [], [], []
    for arr, label in arrays:
        pred, score = soft_vote_predict(model, arr)
        y_true.append(int(label))
        y_pred.append(pred)
        scores.append(score)
    return y_true, y_pred, scores


def evaluate_classifier(model: FineTunedModel, arrays: Sequence[tuple[np.ndarray, int]],
                        task: str = "classification", seed: int = 0, config_digest: str = "") -> EvalReport:
    if not arrays:
        raise ValueError("empty test set")
    y_true, y_pred, _ = predict_arrays(model, arrays)
    return EvalReport(task, classification_metrics(y_true, y_pred, model.labels), config_digest, seed)


# training -----------------------------------------------------------------------


def _vote_score(model: FineTunedModel, arrays) -> tuple[float, float]:
    """Validation accuracy and mean negative log of the true class's vote share."""
    y_true, y_pred, scores = predict_arrays(model, arrays)
    acc = float(np.mean(np.asarray(y_true) == np.asarray(y_pred)))
    nll = float(np.mean([-np.log(max(s[y], 1e-12)) for s, y in zip(scores, y_true)]))
    return acc, nll


def train_classifier(model: FineTunedModel, data: LabeledData, cfg: TrainConfig,
                     val_arrays: Sequence[tuple[np.ndarray, int]] = (), log: JsonLog | None = None
                     ) -> FineTunedModel:
    """Minimize cross-entropy; keep the weights with the best validation vote
    accuracy (ties go to the lower vote log-loss). Frozen tensors are never written."""
    if len(np.unique(data.y)) < 2:
        raise ValueError("training set must cover at least two classes")
    log = log or JsonLog()
    clf = model.classifier
    n_cls = len(clf.labels)
    onehot = np.eye(n_cls, dtype=clf.dtype)
    start = clf.frozen_prefix()
    z = clf.precompute(data.x, start)
    params = clf.trainable_params()
    opt = Adam(lr=cfg.lr)
    rng = np.random.default_rng([cfg.seed, 2])
    has_bn = any(isinstance(layer, BatchNorm) for layer in clf.head)

    def score():
        if val_arrays:
            acc, nll = _vote_score(model, val_arrays)
            return (acc, -nll), acc
        return None, None

    best_key, best_acc = score()
    best_state, best_epoch, bad, step = snapshot(clf.tensors()), 0, 0, 0
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for idx in minibatches(len(data), cfg.batch_size, rng, 2 if has_bn else 1):
            logits = clf.logits(z[idx], training=True, start=start)
            loss, _, dlogits = cross_entropy_from_logits(logits, onehot[data.y[idx]], clf.cspec.ce_kind)
            step += 1
            if not np.isfinite(loss):
                raise TrainingDiverged(step, loss)
            clf.backward(dlogits)
            opt.step(params, clf.trainable_grads())
            total += loss * len(idx)
        key, acc = score()
        train_loss = total / len(data)
        log(event="epoch", step=step, epoch=epoch, train_loss=train_loss, val_accuracy=acc)
        if key is None:
            key = (0.0, -train_loss)
        if best_key is None or key > best_key:
            best_key, best_acc, best_epoch, bad = key, acc, epoch, 0
            best_state = snapshot(clf.tensors())
        else:
            bad += 1
            if bad > cfg.patience:
                break
    restore(clf.tensors(), best_state)
    model.history = log.records
    model.encoder_ref = {**model.encoder_ref, "best_epoch": best_epoch, "best_val_accuracy": best_acc}
    return model


# persistence --------------------------------------------------------------------


def model_bytes(model: FineTunedModel) -> bytes:
    clf = model.classifier
    meta = {
        "format": MODEL_FORMAT,
        "encoder_spec": clf.encoder_spec.to_dict(),
        "classifier": clf.cspec.to_dict(),
        "freeze_plan": {"n_layers_kept": clf.plan.n_layers_kept, "trainable": clf.plan.trainable},
        "labels": clf.labels,
        "encoder_ref": model.encoder_ref,
    }
    return serialize.dumps(clf.tensors(), meta)


def save_model(path, model: FineTunedModel) -> None:
    serialize.atomic_write(path, model_bytes(model))


def model_from_bytes(data: bytes) -> FineTunedModel:
    tensors, meta = serialize.loads(data)
    if meta.get("format") != MODEL_FORMAT:
        raise serialize.ContainerError(f"not a fine-tuned model (format {meta.get('format')!r})")
    clf = Classifier(EncoderSpec.from_dict(meta["encoder_spec"]), ClassifierSpec.from_dict(meta["classifier"]),
                     FreezePlan(**meta["freeze_plan"]), meta["labels"])
    clf.load_tensors(tensors)
    return FineTunedModel(clf, meta.get("encoder_ref", {}))


def load_model(path) -> FineTunedModel:
    return model_from_bytes(Path(path).read_bytes())


def tensor_digest(tensors: dict[str, np.ndarray]) -> dict[str, str]:
    return {k: hashlib.sha256(np.ascontiguousarray(v).tobytes()).hexdigest() for k, v in sorted(tensors.items())}


def spec_json(cspec: ClassifierSpec, plan: FreezePlan) -> str:
    return json.dumps({"classifier": cspec.to_dict(), "plan": plan.__dict__}, sort_keys=True)
