"""Labeled-sequence harnesses for the downstream tasks.

Each harness turns a corpus into train/validation/test lists of
``LabeledSequence`` plus a label vocabulary. Writer ID splits by paragraph;
gender and handedness split by writer so no test writer is seen in training.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .featurize import LabeledSequence
from .ink import Corpus, StrokeSet, concat_pen_down, pen_down_boundaries

TASKS = ("writer_id", "gender", "handedness")


@dataclass
class TaskData:
    name: str
    labels: list[str]
    train: list[LabeledSequence]
    validation: list[LabeledSequence]
    test: list[LabeledSequence]

    def summary(self) -> dict:
        return {"task": self.name, "n_classes": len(self.labels), "train": len(self.train),
                "validation": len(self.validation), "test": len(self.test)}


def labeled(ss: StrokeSet, label: int) -> LabeledSequence:
    return LabeledSequence(concat_pen_down(ss), label, ss.id, pen_down_boundaries(ss))


def _split_of(corpus: Corpus, ss: StrokeSet) -> str | None:
    return corpus.splits.get(ss.id)


def writer_id_task(corpus: Corpus) -> TaskData:
    """Train on the pretrain and train paragraphs, validate and test on the rest."""
    labels = corpus.writers()
    index = {w: i for i, w in enumerate(labels)}
    parts = {"train": [], "validation": [], "test": []}
    for ss in corpus.strokesets:
        split = _split_of(corpus, ss)
        if split is None:
            continue
        parts["train" if split in ("pretrain", "train") else split].append(labeled(ss, index[ss.writer_id]))
    if not parts["test"]:
        raise ValueError("writer identification needs a non-empty test split")
    return TaskData("writer_id", labels, parts["train"], parts["validation"], parts["test"])


def _writer_split(groups: dict[str, list[str]], test_share: float, val_fraction: float,
                  rng: np.random.Generator) -> tuple[set[str], set[str], set[str]]:
    train, val, test = set(), set(), set()
    for name in sorted(groups):
        ws = sorted(groups[name])
        ws = [ws[i] for i in rng.permutation(len(ws))]
        n_test = max(1, int(round(len(ws) * test_share)))
        if len(ws) - n_test < 1:
            raise ValueError(f"group {name!r} has too few writers to split")
        test.update(ws[:n_test])
        rest = ws[n_test:]
        n_val = int(round(len(rest) * val_fraction))
        if n_val >= len(rest):
            n_val = len(rest) - 1
        val.update(rest[:n_val])
        train.update(rest[n_val:])
    return train, val, test


def _attribute_task(corpus: Corpus, name: str, attr: Callable[[StrokeSet], str], labels: Sequence[str],
                    test_share: float, val_fraction: float, seed: int, balance: bool) -> TaskData:
    writer_attr: dict[str, str] = {}
    for ss in corpus.strokesets:
        writer_attr.setdefault(ss.writer_id, attr(ss))
    groups = {lab: [w for w, a in writer_attr.items() if a == lab] for lab in labels}
    if any(len(g) < 2 for g in groups.values()):
        raise ValueError(f"{name}: every class needs at least two writers, got "
                         f"{ {k: len(v) for k, v in groups.items()} }")
    rng = np.random.default_rng([seed, 17])
    if balance:
        n = min(len(g) for g in groups.values())
        groups = {k: [sorted(g)[i] for i in np.sort(rng.permutation(len(g))[:n])] for k, g in groups.items()}
    train_w, val_w, test_w = _writer_split(groups, test_share, val_fraction, rng)
    index = {lab: i for i, lab in enumerate(labels)}
    parts = {"train": [], "validation": [], "test": []}
    for ss in corpus.strokesets:
        w = ss.writer_id
        if w in test_w:
            # the encoder saw pretrain paragraphs, so they never count as test data
            if _split_of(corpus, ss) == "pretrain":
                continue
            key = "test"
        elif w in val_w:
            key = "validation"
        elif w in train_w:
            key = "train"
        else:
            continue
        parts[key].append(labeled(ss, index[writer_attr[w]]))
    if not parts["test"]:
        raise ValueError(f"{name}: empty test set")
    return TaskData(name, list(labels), parts["train"], parts["validation"], parts["test"])


def gender_task(corpus: Corpus, seed: int = 0, val_fraction: float = 0.2) -> TaskData:
    """Equal writers per gender, split 2:1 into train and test."""
    return _attribute_task(corpus, "gender", lambda s: s.gender, ("female", "male"),
                           1 / 3, val_fraction, seed, balance=True)


def handedness_task(corpus: Corpus, seed: int = 0, val_fraction: float = 0.2) -> TaskData:
    """Keeps the natural imbalance; each group is split 3:1 into train and test."""
    return _attribute_task(corpus, "handedness", lambda s: s.handedness, ("left", "right"),
                           0.25, val_fraction, seed, balance=False)


def build_task(name: str, corpus: Corpus, seed: int = 0, val_fraction: float = 0.2) -> TaskData:
    if name == "writer_id":
        return writer_id_task(corpus)
    if name == "gender":
        return gender_task(corpus, seed, val_fraction)
    if name == "handedness":
        return handedness_task(corpus, seed, val_fraction)
    raise ValueError(f"unknown task {name!r}; choose from {TASKS}")
