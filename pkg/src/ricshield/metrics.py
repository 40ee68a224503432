"""Classification metrics, stratified splitting, and confidence-threshold sweeps.

Macro averages are unweighted means over classes; a class that is never
predicted contributes precision 0 (the 0/0 -> 0 convention). That convention
is what makes a constant predictor on a balanced 3-class split score exactly
(accuracy 1/3, macro precision 1/9, macro recall 1/3, macro F1 1/6).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .models import Model, batched_probs


@dataclass
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class Metrics:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class: list[ClassScores]
    confusion: np.ndarray  # (C, C), rows = true class, cols = predicted


def confusion_matrix(y_true: np.ndarray, y_pred: np.ndarray, classes: int = 3) -> np.ndarray:
    cm = np.zeros((classes, classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def metrics_from_confusion(cm: np.ndarray) -> Metrics:
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total == 0:
        raise ValueError("empty confusion matrix")
    per_class = []
    for c in range(cm.shape[0]):
        tp = cm[c, c]
        predicted = cm[:, c].sum()
        support = cm[c, :].sum()
        precision = tp / predicted if predicted else 0.0
        recall = tp / support if support else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class.append(ClassScores(float(precision), float(recall), float(f1), int(support)))
    return Metrics(
        accuracy=float(np.trace(cm) / total),
        macro_precision=float(np.mean([s.precision for s in per_class])),
        macro_recall=float(np.mean([s.recall for s in per_class])),
        macro_f1=float(np.mean([s.f1 for s in per_class])),
        per_class=per_class,
        confusion=cm,
    )


def evaluate(model: Model, images: np.ndarray, labels: np.ndarray,
             batch_size: int = 32) -> Metrics:
    """Argmax predictions over a split, reduced to the full metric set."""
    if images.shape[0] == 0:
        raise ValueError("cannot evaluate an empty split")
    probs = batched_probs(model, images, batch_size)
    return metrics_from_confusion(
        confusion_matrix(labels, probs.argmax(axis=1), classes=probs.shape[1]))


def stratified_split(labels: np.ndarray, fractions: tuple[float, float, float] = (0.70, 0.15, 0.15),
                     seed: int = 0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-class proportional allocation into (train, val, test) index arrays.

    Counts are rounded per class; the test split takes the remainder so the
    three parts are disjoint and exhaustive. Any split with a positive
    fraction must end up with at least one sample per class.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"fractions must be three non-negatives summing to 1, got {fractions}")
    labels = np.asarray(labels, dtype=np.int64)
    gen = rng.numpy_generator(seed, "split")
    parts: list[list[np.ndarray]] = [[], [], []]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        gen.shuffle(idx)
        n = idx.size
        n_train = int(round(fractions[0] * n))
        n_val = int(round(fractions[1] * n))
        n_val = min(n_val, n - n_train)
        counts = (n_train, n_val, n - n_train - n_val)
        for frac, count in zip(fractions, counts):
            if frac > 0 and count < 1:
                raise ValueError(
                    f"class {c}: fraction {frac} leaves {count} samples after rounding")
        parts[0].append(idx[:n_train])
        parts[1].append(idx[n_train:n_train + n_val])
        parts[2].append(idx[n_train + n_val:])
    return tuple(np.sort(np.concatenate(p)) for p in parts)  # type: ignore[return-value]


@dataclass
class SweepPoint:
    threshold: float
    coverage: float
    used: int
    accuracy: float | None  # absent when no sample clears the threshold


@dataclass
class ConfidenceSweep:
    points: list[SweepPoint] = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["threshold", "coverage", "used", "accuracy"])
            for p in self.points:
                writer.writerow([f"{p.threshold:.6g}", f"{p.coverage:.6g}", p.used,
                                 "" if p.accuracy is None else f"{p.accuracy:.6g}"])


def confidence_sweep_from_probs(probs: np.ndarray, labels: np.ndarray,
                                thresholds) -> ConfidenceSweep:
    """Restrict to predictions whose top probability strictly exceeds each
    threshold; ties at the threshold are excluded."""
    thresholds = [float(t) for t in thresholds]
    if any(not 0.0 <= t < 1.0 for t in thresholds):
        raise ValueError("thresholds must lie in [0, 1)")
    if sorted(thresholds) != thresholds:
        raise ValueError("thresholds must be ascending")
    top = probs.max(axis=1)
    pred = probs.argmax(axis=1)
    correct = pred == labels
    sweep = ConfidenceSweep()
    for t in thresholds:
        mask = top > t
        used = int(mask.sum())
        accuracy = float(correct[mask].mean()) if used else None
        sweep.points.append(SweepPoint(t, used / labels.size, used, accuracy))
    return sweep


def confidence_sweep(model: Model, images: np.ndarray, labels: np.ndarray,
                     thresholds, batch_size: int = 32) -> ConfidenceSweep:
    return confidence_sweep_from_probs(batched_probs(model, images, batch_size),
                                       labels, thresholds)
