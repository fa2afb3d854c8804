"""Segmentation metrics computed from a confusion matrix."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .errors import DataError, ShapeError
from .ops import IGNORE_INDEX


class ConfusionMatrix:
    """C x C counts; rows are ground truth, columns predictions."""

    def __init__(self, num_classes: int, counts: Optional[np.ndarray] = None):
        self.num_classes = num_classes
        if counts is None:
            counts = np.zeros((num_classes, num_classes), dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        if self.counts.shape != (num_classes, num_classes):
            raise ShapeError(f"confusion counts {self.counts.shape} for {num_classes} classes")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def copy(self) -> "ConfusionMatrix":
        return ConfusionMatrix(self.num_classes, self.counts.copy())

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        if other.num_classes != self.num_classes:
            raise ShapeError("cannot merge confusion matrices of different sizes")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __eq__(self, other) -> bool:
        return isinstance(other, ConfusionMatrix) and np.array_equal(self.counts, other.counts)


def accumulate(cm: ConfusionMatrix, pred_labels, gt_labels, ignore_index: int = IGNORE_INDEX) -> ConfusionMatrix:
    """Return ``cm`` with one count added per non-ignored pixel."""
    pred = np.asarray(pred_labels)
    gt = np.asarray(gt_labels)
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    keep = gt != ignore_index
    g = gt[keep].astype(np.int64)
    p = pred[keep].astype(np.int64)
    c = cm.num_classes
    if g.size and (g.min() < 0 or g.max() >= c):
        raise DataError(f"ground-truth label outside [0, {c})")
    if p.size and (p.min() < 0 or p.max() >= c):
        raise DataError(f"predicted label outside [0, {c})")
    counts = np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return ConfusionMatrix(c, cm.counts + counts)


def argmax_labels(logits: np.ndarray) -> np.ndarray:
    """Class index per pixel of N x C x H x W scores; ties go to the lowest index."""
    return np.argmax(np.asarray(logits), axis=1)


@dataclass
class SegmentationMetrics:
    pixacc: float
    macc: float
    miou: float
    per_class_iou: np.ndarray
    per_class_acc: np.ndarray
    present: np.ndarray


def compute_metrics(cm: ConfusionMatrix) -> SegmentationMetrics:
    """PixAcc, mAcc and mIoU; classes absent from the ground truth are left
    out of the class averages (their per-class entries are NaN)."""
    counts = cm.counts.astype(np.float64)
    total = counts.sum()
    if total <= 0:
        raise DataError("confusion matrix is empty")
    diag = np.diag(counts)
    rows = counts.sum(axis=1)
    cols = counts.sum(axis=0)
    present = rows > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        acc = np.where(present, diag / rows, np.nan)
        iou = np.where(present, diag / (rows + cols - diag), np.nan)
    return SegmentationMetrics(
        pixacc=float(diag.sum() / total),
        macc=float(np.mean(acc[present])),
        miou=float(np.mean(iou[present])),
        per_class_iou=iou,
        per_class_acc=acc,
        present=present,
    )


def write_metrics_csv(path, metrics: SegmentationMetrics) -> None:
    """Overall metrics as ``metric,value`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        w.writerow(["pixacc", f"{metrics.pixacc:.6f}"])
        w.writerow(["macc", f"{metrics.macc:.6f}"])
        w.writerow(["miou", f"{metrics.miou:.6f}"])


def write_per_class_csv(path, metrics: SegmentationMetrics, class_names: Sequence[str]) -> None:
    """Header ``class,iou,acc`` then exactly one row per class."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["class", "iou", "acc"])
        for name, iou, acc in zip(class_names, metrics.per_class_iou, metrics.per_class_acc):
            w.writerow([name, _fmt(iou), _fmt(acc)])


def write_iou_table(path, metrics: SegmentationMetrics, class_names: Sequence[str]) -> None:
    """Per-class IoU as a single row under a header of class names."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(class_names))
        w.writerow([_fmt(v) for v in metrics.per_class_iou])


def _fmt(v: float) -> str:
    return "nan" if np.isnan(v) else f"{v:.6f}"
