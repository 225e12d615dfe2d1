"""Window construction: features, shift-windowing, per-window scaling, masking.

Also the labeled-window and chain builders used for fine-tuning.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

FEATURES = ("X", "Y", "T", "DX", "DY", "DT")
ORIGIN_SHIFTED = frozenset({"X", "Y", "T"})
EPS_RANGE = 1e-9


class SequenceTooShort(ValueError):
    pass


@dataclass(frozen=True)
class FeatureConfig:
    features: tuple[str, ...] = ("X", "Y")

    def __post_init__(self):
        feats = tuple(f.upper() for f in self.features)
        if not feats:
            raise ValueError("feature set must be non-empty")
        unknown = set(feats) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown features {sorted(unknown)}")
        if len(set(feats)) != len(feats):
            raise ValueError("duplicate features")
        object.__setattr__(self, "features", tuple(f for f in FEATURES if f in feats))

    @property
    def n_features(self) -> int:
        return len(self.features)

    def target_columns(self) -> tuple[int, int]:
        """Columns holding the reconstruction target: X,Y if present, else DX,DY."""
        for a, b in (("X", "Y"), ("DX", "DY")):
            if a in self.features and b in self.features:
                return self.features.index(a), self.features.index(b)
        raise ValueError(f"feature set {self.features} has no x/y pair to reconstruct")


@dataclass(frozen=True)
class WindowingConfig:
    w_size: int = 32
    shift: int = 4

    def __post_init__(self):
        if self.w_size < 1 or self.shift < 1:
            raise ValueError("w_size and shift must be positive")
        if self.shift > self.w_size:
            raise ValueError("shift must not exceed w_size")


def round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


@dataclass(frozen=True)
class MaskingConfig:
    f_mask: float = 0.3
    m_views: int = 3
    per_feature_mask_prob: float = 0.75
    mask_value: float = -1.0

    def __post_init__(self):
        if not 0.0 < self.f_mask < 1.0:
            raise ValueError("f_mask must lie in (0, 1)")
        if self.m_views < 1:
            raise ValueError("m_views must be positive")
        if not 0.0 < self.per_feature_mask_prob <= 1.0:
            raise ValueError("per_feature_mask_prob must lie in (0, 1]")

    def block_len(self, w_size: int) -> int:
        if w_size < 2:
            raise ValueError("masking needs w_size >= 2")
        return min(max(round_half_up(self.f_mask * w_size), 1), w_size - 1)


@dataclass(frozen=True, eq=False)
class Window:
    values: np.ndarray
    source: tuple[str, int] = ("", 0)
    crosses_stroke: bool = False


@dataclass(frozen=True, eq=False)
class MaskedWindow:
    masked_values: np.ndarray
    mask: np.ndarray
    target: np.ndarray
    block_start: int
    block_len: int
    source: tuple[str, int] = ("", 0)


@dataclass(frozen=True, eq=False)
class LabeledChain:
    windows: tuple[Window, ...]
    label: int

    @property
    def values(self) -> np.ndarray:
        return np.stack([w.values for w in self.windows])


@dataclass
class SkipReport:
    skipped: list[str] = field(default_factory=list)

    @property
    def n_skipped(self) -> int:
        return len(self.skipped)


def derive_features(points: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """``(L, 3)`` array of ``(x, y, t)`` rows to an ``(L, n_features)`` matrix.

    Delta columns hold first differences with row 0 set to 0.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] < 3:
        raise ValueError("points must be an (L, 3) array of x, y, t")
    L = len(pts)
    if L == 0:
        raise ValueError("empty point list")
    if L < 2 and any(f.startswith("D") for f in config.features):
        raise ValueError("delta features need at least 2 points")
    base = {"X": 0, "Y": 1, "T": 2}
    out = np.empty((L, config.n_features))
    for j, f in enumerate(config.features):
        col = pts[:, base[f[-1]]]
        if f.startswith("D"):
            out[0, j] = 0.0
            out[1:, j] = np.diff(col)
        else:
            out[:, j] = col
    return out


def window_starts(L: int, cfg: WindowingConfig) -> np.ndarray:
    if L < cfg.w_size:
        return np.zeros(0, dtype=np.int64)
    return np.arange((L - cfg.w_size) // cfg.shift + 1, dtype=np.int64) * cfg.shift


def make_windows(seq: np.ndarray, cfg: WindowingConfig) -> list[np.ndarray]:
    """Slices of ``cfg.w_size`` rows, the k-th starting at ``k * cfg.shift``."""
    L = len(seq)
    if L < cfg.w_size:
        raise SequenceTooShort(f"sequence too short: {L} < w_size {cfg.w_size}")
    return [seq[s:s + cfg.w_size] for s in window_starts(L, cfg)]


def origin_shift(raw: np.ndarray, config: FeatureConfig) -> np.ndarray:
    out = np.array(raw, dtype=np.float64, copy=True)
    for j, f in enumerate(config.features):
        if f in ORIGIN_SHIFTED:
            out[:, j] -= out[0, j]
    return out


def minmax_scale(a: np.ndarray) -> np.ndarray:
    lo = a.min(axis=0)
    rng = a.max(axis=0) - lo
    flat = rng < EPS_RANGE
    scaled = (a - lo) / np.where(flat, 1.0, rng)
    scaled[:, flat] = 0.0
    return scaled


def normalize_window(raw: np.ndarray, config: FeatureConfig,
                     source: tuple[str, int] = ("", 0), crosses_stroke: bool = False) -> Window:
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != config.n_features:
        raise ValueError(f"window shape {raw.shape} does not match {config.n_features} features")
    if not np.all(np.isfinite(raw)):
        raise ValueError("non-finite value in window")
    return Window(minmax_scale(origin_shift(raw, config)), source, crosses_stroke)


def mask_views(window: Window, cfg: MaskingConfig, rng: np.random.Generator,
               target_cols: tuple[int, int] = (0, 1)) -> list[MaskedWindow]:
    values = window.values
    w_size, n_feat = values.shape
    blen = cfg.block_len(w_size)
    target = values[:, list(target_cols)].copy()
    views = []
    for _ in range(cfg.m_views):
        start = int(rng.integers(0, w_size - blen + 1))
        mask = np.zeros((w_size, n_feat), dtype=bool)
        mask[start:start + blen] = rng.random((blen, n_feat)) < cfg.per_feature_mask_prob
        masked = np.where(mask, cfg.mask_value, values)
        views.append(MaskedWindow(masked, mask, target, start, blen, window.source))
    return views


def strokeset_rng(seed: int, strokeset_id: str) -> np.random.Generator:
    """Per-strokeset stream so parallel and serial preprocessing agree."""
    digest = hashlib.sha256(strokeset_id.encode("utf-8")).digest()
    return np.random.default_rng([int(seed) & (2**64 - 1), int.from_bytes(digest[:8], "little")])


def crosses_boundary(start: int, length: int, boundaries: np.ndarray) -> bool:
    return bool(np.any((boundaries > start) & (boundaries < start + length)))


def windows_for_sequence(seq: np.ndarray, fcfg: FeatureConfig, wcfg: WindowingConfig,
                         sid: str = "", boundaries: np.ndarray | None = None) -> list[Window]:
    feats = derive_features(seq, fcfg)
    starts = window_starts(len(feats), wcfg)
    if len(starts) == 0:
        raise SequenceTooShort(f"{sid or 'sequence'} too short: {len(feats)} < w_size {wcfg.w_size}")
    b = boundaries if boundaries is not None else np.zeros(0, dtype=np.int64)
    return [
        normalize_window(feats[s:s + wcfg.w_size], fcfg, (sid, int(s)),
                         crosses_boundary(int(s), wcfg.w_size, b))
        for s in starts
    ]


@dataclass(frozen=True)
class LabeledSequence:
    """Pen-down ``(x, y, t)`` points of one sample plus its class index."""
    points: np.ndarray
    label: int
    id: str = ""
    boundaries: np.ndarray | None = None


def build_exclusive_train(seqs: Iterable[LabeledSequence], fcfg: FeatureConfig,
                          wcfg: WindowingConfig, drop_crossing: bool = False
                          ) -> tuple[list[tuple[Window, int]], SkipReport]:
    out, report = [], SkipReport()
    for s in seqs:
        try:
            wins = windows_for_sequence(s.points, fcfg, wcfg, s.id, s.boundaries)
        except SequenceTooShort:
            report.skipped.append(s.id)
            continue
        out.extend((w, s.label) for w in wins if not (drop_crossing and w.crosses_stroke))
    return out, report


def build_test_arrays(seqs: Iterable[LabeledSequence], fcfg: FeatureConfig,
                      wcfg: WindowingConfig) -> tuple[list[tuple[list[Window], int]], SkipReport]:
    out, report = [], SkipReport()
    for s in seqs:
        try:
            out.append((windows_for_sequence(s.points, fcfg, wcfg, s.id, s.boundaries), s.label))
        except SequenceTooShort:
            report.skipped.append(s.id)
    return out, report


def chain_starts(L: int, n_windows: int, cfg: WindowingConfig) -> np.ndarray:
    span = n_windows * cfg.w_size
    if L < span:
        return np.zeros(0, dtype=np.int64)
    return np.arange((L - span) // cfg.shift + 1, dtype=np.int64) * cfg.shift


def chains_for_sequence(s: LabeledSequence, n_windows: int, fcfg: FeatureConfig,
                        wcfg: WindowingConfig) -> list[LabeledChain]:
    if n_windows < 1:
        raise ValueError("n_windows must be positive")
    feats = derive_features(s.points, fcfg)
    b = s.boundaries if s.boundaries is not None else np.zeros(0, dtype=np.int64)
    chains = []
    for c0 in chain_starts(len(feats), n_windows, wcfg):
        wins = []
        for k in range(n_windows):
            a = int(c0) + k * wcfg.w_size
            wins.append(normalize_window(feats[a:a + wcfg.w_size], fcfg, (s.id, a),
                                         crosses_boundary(a, wcfg.w_size, b)))
        chains.append(LabeledChain(tuple(wins), s.label))
    return chains


def build_inclusive_chains(seqs: Iterable[LabeledSequence], n_windows: int, fcfg: FeatureConfig,
                           wcfg: WindowingConfig) -> tuple[list[LabeledChain], SkipReport]:
    if n_windows < 1:
        raise ValueError("n_windows must be positive")
    out, report = [], SkipReport()
    for s in seqs:
        chains = chains_for_sequence(s, n_windows, fcfg, wcfg)
        if not chains:
            report.skipped.append(s.id)
        out.extend(chains)
    return out, report


def build_chain_arrays(seqs: Iterable[LabeledSequence], n_windows: int, fcfg: FeatureConfig,
                       wcfg: WindowingConfig) -> tuple[list[tuple[list[LabeledChain], int]], SkipReport]:
    """Test-time counterpart of ``build_inclusive_chains``: one chain array per sequence."""
    out, report = [], SkipReport()
    for s in seqs:
        chains = chains_for_sequence(s, n_windows, fcfg, wcfg)
        if chains:
            out.append((chains, s.label))
        else:
            report.skipped.append(s.id)
    return out, report


def stack_masked(views: Sequence[MaskedWindow]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(inputs, masks, targets) arrays for a batch of masked views."""
    return (np.stack([v.masked_values for v in views]),
            np.stack([v.mask for v in views]),
            np.stack([v.target for v in views]))
