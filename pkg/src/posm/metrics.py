from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

REPORT_SCHEMA = "posm-eval-report/1"


def confusion_matrix(y_true: Sequence[int], y_pred: Sequence[int], n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def classification_metrics(y_true: Sequence[int], y_pred: Sequence[int], labels: Sequence[str]) -> dict:
    """Accuracy, per-class precision/recall/F1, macro-F1 and confusion counts.

    Classes that neither occur nor get predicted are left out of the macro
    average; a class with zero precision and recall scores F1 = 0.
    """
    if len(y_true) == 0:
        raise ValueError("empty test set")
    n = len(labels)
    cm = confusion_matrix(y_true, y_pred, n)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    per_class = {}
    f1s = []
    for c, name in enumerate(labels):
        if support[c] == 0 and predicted[c] == 0:
            continue
        p = tp[c] / predicted[c] if predicted[c] else 0.0
        r = tp[c] / support[c] if support[c] else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class[name] = {"precision": p, "recall": r, "f1": f1, "support": int(support[c])}
        f1s.append(f1)
    return {
        "accuracy": float(tp.sum() / cm.sum()),
        "macro_f1": float(np.mean(f1s)),
        "per_class": per_class,
        "confusion": cm.tolist(),
        "labels": list(labels),
        "n": int(cm.sum()),
    }


@dataclass
class EvalReport:
    task: str
    metrics: dict
    config_digest: str = ""
    seed: int = 0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        acc = self.metrics.get("accuracy")
        if acc is not None and not 0.0 <= acc <= 1.0:
            raise ValueError(f"accuracy {acc} outside [0, 1]")
        for name, row in self.metrics.get("per_class", {}).items():
            if not 0.0 <= row["f1"] <= 1.0:
                raise ValueError(f"F1 for {name} outside [0, 1]")

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "task": self.task, "metrics": self.metrics,
                "config_digest": self.config_digest, "seed": self.seed, "extra": self.extra}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("schema") != REPORT_SCHEMA:
            raise ValueError(f"unsupported report schema {d.get('schema')!r}")
        return cls(d["task"], d["metrics"], d.get("config_digest", ""), d.get("seed", 0), d.get("extra", {}))
