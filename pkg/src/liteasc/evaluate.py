"""Accuracy, log-loss, confusion matrix and per-scene reports."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .corpus import SCENES

PROB_CLIP = 1e-15


def predict_labels(probs) -> np.ndarray:
    """Argmax per row; ties resolve to the lowest class index."""
    return np.argmax(np.asarray(probs), axis=-1)


def accuracy(predictions, labels) -> float:
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    if predictions.shape != labels.shape:
        raise ValueError(f"{predictions.shape[0]} predictions for {labels.shape[0]} labels")
    if labels.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.count_nonzero(predictions == labels)) / labels.size


def log_loss(probs, labels) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("log-loss of an empty set is undefined")
    if probs.shape[0] != labels.shape[0]:
        raise ValueError(f"{probs.shape[0]} probability rows for {labels.shape[0]} labels")
    picked = np.clip(probs[np.arange(labels.size), labels], PROB_CLIP, 1.0 - PROB_CLIP)
    # fsum is correctly rounded, so the result does not depend on sample order
    return math.fsum(-np.log(picked)) / labels.size


def confusion_matrix(predictions, labels, class_count: int = 10) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    predictions, labels = np.asarray(predictions), np.asarray(labels)
    for name, arr in (("prediction", predictions), ("label", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= class_count):
            raise ValueError(f"{name} index outside [0, {class_count})")
    cm = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(cm, (labels, predictions), 1)
    return cm


@dataclass
class SceneRow:
    scene: str
    count: int
    accuracy: Optional[float]
    logloss: Optional[float]


@dataclass
class EvalReport:
    overall_accuracy: float
    overall_logloss: float
    confusion: np.ndarray
    per_scene: List[SceneRow]
    average_accuracy: float
    average_logloss: float
    per_device: Optional[List[SceneRow]] = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scene", "accuracy", "logloss"])
        for row in self.per_scene:
            if row.accuracy is None:
                w.writerow([row.scene, "", ""])
            else:
                w.writerow([row.scene, f"{row.accuracy:.6f}", f"{row.logloss:.6f}"])
        w.writerow(["average", f"{self.average_accuracy:.6f}", f"{self.average_logloss:.6f}"])
        return buf.getvalue()

    def confusion_csv(self, names: Sequence[str] = SCENES) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["true\\pred", *names])
        for name, row in zip(names, self.confusion):
            w.writerow([name, *row.tolist()])
        return buf.getvalue()


def _rows(probs, labels, preds, groups, names):
    rows = []
    for i, name in enumerate(names):
        mask = groups == i
        count = int(mask.sum())
        if count == 0:
            rows.append(SceneRow(name, 0, None, None))
        else:
            rows.append(SceneRow(name, count, accuracy(preds[mask], labels[mask]),
                                 log_loss(probs[mask], labels[mask])))
    return rows


def macro_average(rows: Sequence[SceneRow]):
    present = [r for r in rows if r.accuracy is not None]
    absent = [r.scene for r in rows if r.accuracy is None]
    if absent:
        warnings.warn(f"no samples for {', '.join(absent)}; left out of the average", stacklevel=3)
    if not present:
        raise ValueError("no scene has any samples")
    return (float(np.mean([r.accuracy for r in present])),
            float(np.mean([r.logloss for r in present])))


def per_scene_report(probs, labels, scenes: Sequence[str] = SCENES,
                     devices: Optional[Sequence[str]] = None) -> EvalReport:
    """Overall metrics, confusion matrix and per-scene rows with an unweighted average."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.shape[0] != labels.shape[0]:
        raise ValueError("probabilities and labels differ in length")
    preds = predict_labels(probs)
    rows = _rows(probs, labels, preds, labels, scenes)
    avg_acc, avg_ll = macro_average(rows)
    per_device = None
    if devices is not None:
        devices = np.asarray(devices)
        if devices.shape[0] != labels.shape[0]:
            raise ValueError("devices and labels differ in length")
        names = sorted(set(devices.tolist()))
        codes = np.array([names.index(d) for d in devices])
        per_device = _rows(probs, labels, preds, codes, names)
    return EvalReport(accuracy(preds, labels), log_loss(probs, labels),
                      confusion_matrix(preds, labels, len(scenes)), rows, avg_acc, avg_ll,
                      per_device)
