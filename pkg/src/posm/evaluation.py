"""Reconstruction evaluation, SVG rendering, and the pretrained-vs-scratch comparison."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import featurize as fz
from .finetune import (ClassifierSpec, FineTunedModel, FreezePlan, assemble, evaluate_classifier,
                       exclusive_train_data, inclusive_train_data, test_arrays, train_classifier)
from .ink import StrokeSet
from .nn.losses import masked_mse
from .pretrain import EncoderCheckpoint, strokeset_windows
from .tasks import TaskData
from .training import JsonLog, TrainConfig

COMPARE_SCHEMA = "posm-compare-report/1"


@dataclass
class ReconstructionCase:
    original: fz.Window
    masked: fz.MaskedWindow
    predicted: np.ndarray
    mse: float
    masked_mse: float
    baseline_masked_mse: float

    @property
    def block_region(self) -> np.ndarray:
        """Timesteps covered by the masking block, as a (w, 2) boolean array."""
        region = np.zeros(self.predicted.shape, dtype=bool)
        region[self.masked.block_start:self.masked.block_start + self.masked.block_len] = True
        return region


def copy_input_prediction(masked: fz.MaskedWindow, target_cols: tuple[int, int]) -> np.ndarray:
    """Baseline that echoes the masked x/y columns, mask values included."""
    return np.asarray(masked.masked_values[:, list(target_cols)], dtype=np.float64)


def reconstruction_suite(ckpt: EncoderCheckpoint, strokesets: Sequence[StrokeSet], seed: int = 0,
                         masking: fz.MaskingConfig | None = None, batch_size: int = 256
                         ) -> tuple[list[ReconstructionCase], dict]:
    """Mask every window of the given paragraphs ``m_views`` times, reconstruct,
    and score each view. Returns the cases and a summary of their statistics."""
    spec = ckpt.spec
    mcfg = masking or spec.masking
    tcols = spec.features.target_columns()
    originals, views = [], []
    for ss in strokesets:
        try:
            wins = strokeset_windows(ss, spec.features, spec.windowing)
        except fz.SequenceTooShort:
            continue
        rng = fz.strokeset_rng(seed, ss.id)
        for w in wins:
            for v in fz.mask_views(w, mcfg, rng, tcols):
                originals.append(w)
                views.append(v)
    if not views:
        raise ValueError("no held-out windows to reconstruct")
    inputs, _, targets = fz.stack_masked(views)
    pred = ckpt.encoder.reconstruct(inputs.astype(np.float32), batch_size).astype(np.float64)
    cases = []
    for i, v in enumerate(views):
        region = np.zeros(targets[i].shape, dtype=bool)
        region[v.block_start:v.block_start + v.block_len] = True
        t = targets[i].astype(np.float64)
        copy = copy_input_prediction(v, tcols)
        cases.append(ReconstructionCase(
            originals[i], v, pred[i],
            float(np.mean((pred[i] - t) ** 2)),
            masked_mse(pred[i], t, region),
            masked_mse(copy, t, region),
        ))
    return cases, summarize(cases)


def summarize(cases: Sequence[ReconstructionCase]) -> dict:
    mse = np.array([c.mse for c in cases])
    mmse = np.array([c.masked_mse for c in cases])
    base = np.array([c.baseline_masked_mse for c in cases])
    return {
        "n_cases": len(cases),
        "mse_mean": float(mse.mean()), "mse_median": float(np.median(mse)),
        "masked_mse_mean": float(mmse.mean()), "masked_mse_median": float(np.median(mmse)),
        "baseline_masked_mse_mean": float(base.mean()),
        "baseline_masked_mse_median": float(np.median(base)),
        "beats_baseline_fraction": float(np.mean(mmse < base)),
    }


# SVG ------------------------------------------------------------------------------

VIEW = 400
MARGIN = 20
LEGEND_H = 60
STYLES = (("original", "#1f77b4", ""), ("visible input", "#2ca02c", ' stroke-dasharray="4 3"'),
          ("predicted", "#d62728", ""))


def _points(xy: np.ndarray) -> str:
    span = VIEW - 2 * MARGIN
    out = []
    for x, y in np.asarray(xy, dtype=np.float64):
        px = MARGIN + span * x
        py = MARGIN + span * (1.0 - y)  # y grows upward in ink space
        out.append(f"{px:.2f},{py:.2f}")
    return " ".join(out)


def render_svg(case: ReconstructionCase, title: str = "") -> str:
    """SVG 1.1 document overlaying the original window, the unmasked part of
    the input, and the reconstruction."""
    orig = case.masked.target
    visible_rows = ~case.masked.mask.any(axis=1)
    vis = orig[visible_rows]
    lines = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        '<svg xmlns="http://www.w3.org/2000/svg" version="1.1" '
        f'width="{VIEW}" height="{VIEW + LEGEND_H}" viewBox="0 0 {VIEW} {VIEW + LEGEND_H}">',
        f"<title>{_escape(title or '%s@%d' % case.original.source)}</title>",
        f'<rect x="0" y="0" width="{VIEW}" height="{VIEW + LEGEND_H}" fill="white"/>',
    ]
    for (name, color, extra), xy in zip(STYLES, (orig, vis, case.predicted)):
        lines.append(f'<polyline class="{name.replace(" ", "-")}" fill="none" stroke="{color}" '
                     f'stroke-width="2"{extra} points="{_points(xy)}"/>')
    for k, (name, color, _) in enumerate(STYLES):
        y = VIEW + 15 + 15 * k
        lines.append(f'<rect x="{MARGIN}" y="{y - 8}" width="12" height="4" fill="{color}"/>')
        lines.append(f'<text x="{MARGIN + 18}" y="{y}" font-family="sans-serif" font-size="11">{name}</text>')
    lines.append(f'<text x="{VIEW - MARGIN}" y="{VIEW + 15}" text-anchor="end" font-family="sans-serif" '
                 f'font-size="11">masked MSE {case.masked_mse:.4f}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# pretrained vs scratch --------------------------------------------------------------


@dataclass
class ComparisonSetup:
    cspec: ClassifierSpec
    plan: FreezePlan
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    s_train: int = 16
    s_test: int = 4


def _fit_and_score(ckpt: EncoderCheckpoint, task: TaskData, setup: ComparisonSetup, seed: int,
                   pretrained: bool, plan: FreezePlan, data_cache: dict, log: JsonLog | None) -> float:
    spec, cs = ckpt.spec, setup.cspec
    if "train" not in data_cache:
        if cs.pipeline == "exclusive":
            data_cache["train"] = exclusive_train_data(task.train, spec, setup.s_train)
        else:
            data_cache["train"] = inclusive_train_data(task.train, spec, cs.n_windows, setup.s_train)
        data_cache["val"] = test_arrays(task.validation, spec, cs, setup.s_test)
        data_cache["test"] = test_arrays(task.test, spec, cs, setup.s_test)
    model = assemble(ckpt, cs, plan, task.labels, seed=seed, pretrained=pretrained)
    cfg = TrainConfig(setup.train_cfg.epochs, setup.train_cfg.batch_size, setup.train_cfg.lr,
                      setup.train_cfg.patience, seed)
    train_classifier(model, data_cache["train"], cfg, data_cache["val"], log)
    return evaluate_classifier(model, data_cache["test"], task.name, seed).metrics["accuracy"]


def compare_pretrained_vs_scratch(ckpt: EncoderCheckpoint, task: TaskData, setup: ComparisonSetup,
                                  seeds: Sequence[int], control: bool = False,
                                  log: JsonLog | None = None,
                                  progress: Callable[[dict], None] | None = None) -> dict:
    """Train the same classifier from the checkpoint (with the setup's freeze
    plan) and from random weights (everything trainable), once per seed.

    With ``control=True`` both arms use the pretrained arm's recipe, so every
    margin must be zero.
    """
    seeds = list(seeds)
    if not seeds:
        raise ValueError("need at least one seed")
    if len(seeds) < 2:
        warnings.warn("fewer than 2 seeds: paired statistics are degenerate", RuntimeWarning, stacklevel=2)
    scratch_plan = FreezePlan(setup.plan.n_layers_kept, "all")
    cache: dict = {}
    rows = []
    for s in seeds:
        pre = _fit_and_score(ckpt, task, setup, s, True, setup.plan, cache, log)
        if control:
            scr = _fit_and_score(ckpt, task, setup, s, True, setup.plan, cache, log)
        else:
            scr = _fit_and_score(ckpt, task, setup, s, False, scratch_plan, cache, log)
        row = {"seed": s, "pretrained": pre, "scratch": scr, "margin": pre - scr}
        rows.append(row)
        if progress:
            progress(row)
    margins = np.array([r["margin"] for r in rows])
    return {
        "schema": COMPARE_SCHEMA,
        "task": task.name,
        "classifier": setup.cspec.to_dict(),
        "freeze_plan": {"n_layers_kept": setup.plan.n_layers_kept, "trainable": setup.plan.trainable},
        "control": control,
        "rows": rows,
        "mean_margin": float(margins.mean()),
        "wins": int(np.sum(margins > 0)),
        "ties": int(np.sum(margins == 0)),
        "n_pairs": len(rows),
    }
