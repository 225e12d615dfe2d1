"""Run configuration: nested dataclasses, JSON files, and derived CLI flags.

A config file mirrors ``RunConfig.to_dict()``. Every leaf field also exists
as a flag named ``--<section>-<field>`` (dashes for underscores). Values are
resolved as flags > file > defaults, and unknown keys are errors.
"""
from __future__ import annotations

import argparse
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path
from typing import Any, get_type_hints

from . import featurize as fz
from .finetune import ClassifierSpec, FreezePlan, preset
from .nn.spec import parse_layers
from .pretrain import EncoderSpec
from .training import TrainConfig


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    corpus: str = ""          # interchange file; relative paths resolve against the data directory
    features: str = "X,Y"


@dataclass
class WindowSection:
    w_size: int = 32
    s_posm: int = 4
    s_train: int = 16
    s_test: int = 4


@dataclass
class MaskSection:
    f_mask: float = 0.3
    m_views: int = 3
    per_feature_mask_prob: float = 0.75
    mask_value: float = -1.0


@dataclass
class EncoderSection:
    block_type: str = "full_state"
    blstm_layers: str = "32*relu + 32*relu + 32*relu"
    head_layers: str = "BN + 256*relu + 64*relu + reshape(32,2)"


@dataclass
class PretrainSection:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 5
    val_fraction: float = 0.1


@dataclass
class FinetuneSection:
    task: str = "writer_id"
    preset: str = ""            # a named structure; overrides the four fields below when set
    pipeline: str = "exclusive"
    n_windows: int = 0          # 0: 1 for exclusive, 20 for inclusive
    optional_blstm: str = "-"
    optional_block: str = "none"
    head_layers: str = "32*relu + 2*softmax"
    n_layers_kept: int = 2
    trainable: str = "none"
    epochs: int = 50
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 5
    val_fraction: float = 0.2


@dataclass
class ReconstructSection:
    limit: int = 12             # SVG files written; the summary covers every case


@dataclass
class RunConfig:
    seed: int = 0
    threads: int = 1
    data: DataSection = field(default_factory=DataSection)
    windowing: WindowSection = field(default_factory=WindowSection)
    masking: MaskSection = field(default_factory=MaskSection)
    encoder: EncoderSection = field(default_factory=EncoderSection)
    pretrain: PretrainSection = field(default_factory=PretrainSection)
    finetune: FinetuneSection = field(default_factory=FinetuneSection)
    reconstruct: ReconstructSection = field(default_factory=ReconstructSection)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    # derived specs ---------------------------------------------------------
    def feature_config(self) -> fz.FeatureConfig:
        return fz.FeatureConfig(tuple(f.strip() for f in self.data.features.split(",") if f.strip()))

    def encoder_spec(self) -> EncoderSpec:
        return EncoderSpec(
            block_type=self.encoder.block_type,
            features=self.feature_config(),
            blstm_layers=tuple(parse_layers(self.encoder.blstm_layers, "blstm")),
            head_layers=tuple(parse_layers(self.encoder.head_layers)),
            windowing=fz.WindowingConfig(self.windowing.w_size, self.windowing.s_posm),
            masking=fz.MaskingConfig(self.masking.f_mask, self.masking.m_views,
                                     self.masking.per_feature_mask_prob, self.masking.mask_value),
        )

    def pretrain_config(self) -> TrainConfig:
        p = self.pretrain
        return TrainConfig(p.epochs, p.batch_size, p.lr, p.patience, self.seed)

    def finetune_config(self) -> TrainConfig:
        f = self.finetune
        return TrainConfig(f.epochs, f.batch_size, f.lr, f.patience, self.seed)

    def classifier_spec(self) -> ClassifierSpec:
        f = self.finetune
        if f.preset:
            return preset(f.preset, f.n_windows)
        return ClassifierSpec(f.pipeline, f.n_windows, tuple(parse_layers(f.optional_blstm, "blstm")),
                              f.optional_block, tuple(parse_layers(f.head_layers)))

    def freeze_plan(self) -> FreezePlan:
        return FreezePlan(self.finetune.n_layers_kept, self.finetune.trainable)

    def validate(self) -> "RunConfig":
        """Build every derived spec once so bad values fail early with a clear message."""
        try:
            self.encoder_spec()
            self.pretrain_config()
            self.finetune_config()
            self.classifier_spec()
            self.freeze_plan()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")
        return self


def _sections() -> list[tuple[str, type]]:
    hints = get_type_hints(RunConfig)
    return [(f.name, hints[f.name]) for f in fields(RunConfig)]


def _coerce(value: Any, typ: type, where: str) -> Any:
    if typ is bool or isinstance(value, bool) and typ is not bool:
        raise ConfigError(f"{where}: expected {typ.__name__}, got {value!r}")
    if typ is float and isinstance(value, int):
        return float(value)
    if not isinstance(value, typ):
        raise ConfigError(f"{where}: expected {typ.__name__}, got {type(value).__name__}")
    return value


def from_dict(d: dict) -> RunConfig:
    cfg = RunConfig()
    if not isinstance(d, dict):
        raise ConfigError("config root must be a JSON object")
    known = dict(_sections())
    for key, value in d.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        typ = known[key]
        if is_dataclass(typ):
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected an object")
            sub = getattr(cfg, key)
            sub_hints = get_type_hints(typ)
            for k, v in value.items():
                if k not in sub_hints:
                    raise ConfigError(f"unknown config key {key}.{k!r}")
                setattr(sub, k, _coerce(v, sub_hints[k], f"{key}.{k}"))
        else:
            setattr(cfg, key, _coerce(value, typ, key))
    return cfg


def load(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return from_dict(d)


def flag_name(section: str | None, name: str) -> str:
    return "--" + (f"{section}-{name}" if section else name).replace("_", "-")


def add_config_flags(parser: argparse.ArgumentParser, sections: tuple[str, ...] | None = None) -> None:
    """One flag per config leaf. Defaults are ``None`` so unset flags never mask the file."""
    group = parser.add_argument_group("config overrides")
    for name, typ in _sections():
        if is_dataclass(typ):
            if sections is not None and name not in sections:
                continue
            defaults = typ()
            for f in fields(typ):
                ftyp = get_type_hints(typ)[f.name]
                group.add_argument(flag_name(name, f.name), dest=f"cfg__{name}__{f.name}", type=ftyp,
                                   default=None, metavar=ftyp.__name__.upper(),
                                   help=f"(default: {getattr(defaults, f.name)!r})")
        elif name not in ("seed", "threads"):  # those two are global flags
            group.add_argument(flag_name(None, name), dest=f"cfg__{name}", type=typ, default=None)


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = load(args.config) if getattr(args, "config", None) else RunConfig()
    for key, value in vars(args).items():
        if value is None or not key.startswith("cfg__"):
            continue
        parts = key.split("__")[1:]
        if len(parts) == 2:
            setattr(getattr(cfg, parts[0]), parts[1], value)
        else:
            setattr(cfg, parts[0], value)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None) is not None:
        cfg.threads = args.threads
    return cfg.validate()


def defaults_json() -> str:
    return RunConfig().to_json()
