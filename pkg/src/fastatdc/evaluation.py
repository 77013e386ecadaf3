"""Confusion matrices, per-class F1 and the two binary collapses."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fastatdc.errors import DataError
from fastatdc.trajdata import ANOMALY_CLASSES, ClassLabel

N_CLASSES = len(ClassLabel)
CSV_COLUMNS = [
    "dataset",
    "method",
    "f1_gd",
    "f1_ld",
    "f1_nt",
    "f1_ls",
    "f1_gs",
    "macro_f1",
    "case1_f1",
    "case2_f1",
    "seconds_per_100",
]


class UndefinedMetricWarning(UserWarning):
    pass


CASE1_ANOMALOUS = frozenset(ANOMALY_CLASSES)
CASE2_ANOMALOUS = frozenset({ClassLabel.GD, ClassLabel.GS})


@dataclass
class MetricsReport:
    confusion: np.ndarray
    f1_per_class: np.ndarray
    macro_f1_anomaly: float
    case1_f1: float
    case2_f1: float
    undefined_classes: Tuple[ClassLabel, ...] = ()

    def as_dict(self) -> dict:
        return {
            "confusion": self.confusion.tolist(),
            "f1_per_class": {c.name: float(self.f1_per_class[c]) for c in ClassLabel},
            "macro_f1_anomaly": self.macro_f1_anomaly,
            "case1_f1": self.case1_f1,
            "case2_f1": self.case2_f1,
            "undefined_classes": [c.name for c in self.undefined_classes],
        }

    def to_json(self, **extra) -> str:
        doc = self.as_dict()
        doc.update(extra)
        return json.dumps(doc, indent=2)

    def csv_row(self, dataset: str, method: str, seconds_per_100: Optional[float] = None) -> list:
        return [
            dataset,
            method,
            *(f"{float(f):.6f}" for f in self.f1_per_class),
            f"{self.macro_f1_anomaly:.6f}",
            f"{self.case1_f1:.6f}",
            f"{self.case2_f1:.6f}",
            "" if seconds_per_100 is None else f"{seconds_per_100:.6f}",
        ]


def confusion_matrix(truth: Sequence[int], pred: Sequence[int]) -> np.ndarray:
    """5x5 counts, rows indexed by true class and columns by predicted class."""
    if len(truth) != len(pred):
        raise DataError(f"length mismatch: {len(truth)} true vs {len(pred)} predicted labels")
    if len(truth) == 0:
        raise DataError("no labels to evaluate")
    t = np.asarray([int(x) for x in truth], dtype=np.int64)
    p = np.asarray([int(x) for x in pred], dtype=np.int64)
    if t.min() < 0 or t.max() >= N_CLASSES or p.min() < 0 or p.max() >= N_CLASSES:
        raise DataError("labels must be class codes 0..4")
    out = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(out, (t, p), 1)
    return out


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2 * tp / denom


def f1_scores(confusion: np.ndarray) -> Tuple[np.ndarray, float, Tuple[ClassLabel, ...]]:
    """Per-class F1, Macro-F1 over the four anomaly classes, and undefined classes.

    A class with neither true nor predicted members gets F1 = 0 and is
    reported as undefined.
    """
    confusion = np.asarray(confusion)
    f1 = np.zeros(N_CLASSES)
    undefined = []
    for c in ClassLabel:
        tp = int(confusion[c, c])
        fp = int(confusion[:, c].sum()) - tp
        fn = int(confusion[c, :].sum()) - tp
        if tp + fp + fn == 0:
            undefined.append(c)
        f1[c] = _f1(tp, fp, fn)
    macro = float(np.mean([f1[c] for c in ANOMALY_CLASSES]))
    return f1, macro, tuple(undefined)


def collapse_case1(labels: Sequence[int]) -> List[bool]:
    """True where the label is any of the four anomaly classes."""
    return [ClassLabel(x) in CASE1_ANOMALOUS for x in labels]


def collapse_case2(labels: Sequence[int]) -> List[bool]:
    """True only for global anomalies (GD, GS)."""
    return [ClassLabel(x) in CASE2_ANOMALOUS for x in labels]


def binary_f1(truth: Sequence[bool], pred: Sequence[bool]) -> float:
    """F1 of the positive (anomalous) class."""
    t = np.asarray(truth, dtype=bool)
    p = np.asarray(pred, dtype=bool)
    tp = int(np.sum(t & p))
    fp = int(np.sum(~t & p))
    fn = int(np.sum(t & ~p))
    return _f1(tp, fp, fn)


def evaluate(truth: Sequence[int], pred: Sequence[int]) -> MetricsReport:
    conf = confusion_matrix(truth, pred)
    f1, macro, undefined = f1_scores(conf)
    if undefined:
        warnings.warn(
            "F1 set to 0 for classes absent from truth and predictions: "
            + ", ".join(c.name for c in undefined),
            UndefinedMetricWarning,
            stacklevel=2,
        )
    case1 = binary_f1(collapse_case1(truth), collapse_case1(pred))
    case2 = binary_f1(collapse_case2(truth), collapse_case2(pred))
    return MetricsReport(conf, f1, macro, case1, case2, undefined)
