"""Training objectives: class-balanced cross-entropy, berHu regression,
pyramid supervision and their unweighted total."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .decoder import DecoderOutput, TaskKind
from .errors import DataError, ShapeError
from .ops import IGNORE_INDEX, softmax_cross_entropy
from .tensor import Tensor, make_op, record_branch


@dataclass
class ClassWeights:
    alpha: np.ndarray
    median_prob: float
    class_probs: np.ndarray


def median_frequency_weights(histogram: Sequence[int]) -> ClassWeights:
    """alpha_c = p_m / p_c with p_m the median over classes that occur.

    For an even number of occurring classes the lower median is used.
    Classes with no pixels get weight 0.
    """
    counts = np.asarray(histogram, dtype=np.float64)
    if counts.ndim != 1 or (counts < 0).any():
        raise DataError("histogram must be a 1-D array of non-negative counts")
    total = counts.sum()
    if total <= 0:
        raise DataError("class histogram is empty")
    probs = counts / total
    present = np.sort(probs[probs > 0])
    p_m = float(present[(present.size - 1) // 2])
    alpha = np.zeros_like(probs)
    nz = probs > 0
    alpha[nz] = p_m / probs[nz]
    return ClassWeights(alpha=alpha, median_prob=p_m, class_probs=probs)


def berhu_loss(
    pred: Tensor,
    target: np.ndarray,
    valid_mask: Optional[np.ndarray] = None,
    beta: Optional[float] = None,
) -> Tensor:
    """Reverse Huber loss averaged over valid elements.

    Residuals at or below ``beta`` contribute ``|r|``, larger ones
    ``(r^2 + beta^2) / (2 beta)``. ``beta`` defaults to one fifth of the
    largest valid residual in the batch and is held constant in backward.
    ``valid_mask`` broadcasts against ``pred``.
    """
    target = np.asarray(getattr(target, "data", target))
    if target.shape != pred.shape:
        raise ShapeError(f"berhu: pred {pred.shape} vs target {target.shape}")
    if valid_mask is None:
        valid = np.ones(pred.shape, dtype=bool)
    else:
        valid = np.broadcast_to(np.asarray(valid_mask, dtype=bool), pred.shape)
    count = int(valid.sum())
    if count == 0:
        raise DataError("berhu loss needs at least one valid pixel")
    dtype = pred.dtype
    diff = np.where(valid, pred.data - target.astype(dtype, copy=False), dtype.type(0))
    r = np.abs(diff)
    if beta is None:
        beta = float(r.max()) / 5.0
    beta = float(beta)
    if beta > 0:
        quad = r > beta
        per = np.where(quad, (r * r + beta * beta) / (2 * beta), r)
    else:
        quad = np.zeros_like(valid)
        per = r
    record_branch(quad)
    record_branch(diff > 0)
    loss = per.sum(dtype=np.float64) / count

    def backward_fn(g):
        inv = 1.0 / beta if beta > 0 else 0.0
        grad = np.where(quad, diff * inv, np.sign(diff)) * (float(g) / count)
        return (grad.astype(dtype, copy=False),)

    return make_op(np.asarray(loss, dtype=dtype), (pred,), backward_fn, "berhu")


def berhu_beta(pred: np.ndarray, target: np.ndarray, valid_mask=None) -> float:
    r = np.abs(np.asarray(pred) - np.asarray(target))
    if valid_mask is not None:
        r = np.where(np.broadcast_to(valid_mask, r.shape), r, 0)
    return float(r.max()) / 5.0


def depth_valid_mask(depth: np.ndarray) -> np.ndarray:
    """Valid where depth is positive; shape (N, 1, H, W)."""
    d = np.asarray(depth)
    return (d > 0).reshape(d.shape[0], 1, *d.shape[-2:])


def normal_valid_mask(normals: np.ndarray) -> np.ndarray:
    """Valid where the target normal is (approximately) unit length; (N, 1, H, W)."""
    n = np.asarray(normals)
    return (np.sum(n * n, axis=1, keepdims=True) > 0.25)


def depth_loss(pred: Tensor, target_depth: np.ndarray, beta: Optional[float] = None) -> Tensor:
    t = np.asarray(target_depth).reshape(pred.shape)
    return berhu_loss(pred, t, depth_valid_mask(t), beta)


def normal_loss(pred: Tensor, target_normals: np.ndarray, valid_mask=None,
                beta: Optional[float] = None) -> Tensor:
    """berHu over all three channels jointly (one beta for the stack)."""
    if pred.ndim != 4 or pred.shape[1] != 3:
        raise ShapeError(f"normal prediction must be N x 3 x H x W, got {pred.shape}")
    t = np.asarray(target_normals)
    if valid_mask is None:
        valid_mask = normal_valid_mask(t)
    else:
        valid_mask = np.asarray(valid_mask, dtype=bool).reshape(pred.shape[0], 1, *pred.shape[2:])
    return berhu_loss(pred, t, valid_mask, beta)


def downsample_labels(labels: np.ndarray, stride: int) -> np.ndarray:
    """Nearest-neighbour label downsampling (top-left sample of each cell)."""
    return np.ascontiguousarray(np.asarray(labels)[:, ::stride, ::stride])


def pyramid_loss(side_outputs: Sequence[Tensor], labels: np.ndarray, weights=None,
                 ignore_index: int = IGNORE_INDEX) -> list[Tensor]:
    """One weighted cross-entropy per side output, labels resampled to its stride."""
    labels = np.asarray(labels)
    alpha = getattr(weights, "alpha", weights)
    losses = []
    for side in side_outputs:
        stride = labels.shape[1] // side.shape[2]
        if stride < 1 or labels.shape[1] != stride * side.shape[2] or labels.shape[2] != stride * side.shape[3]:
            raise ShapeError(f"side output {side.shape} does not tile labels {labels.shape}")
        losses.append(softmax_cross_entropy(side, downsample_labels(labels, stride), alpha, ignore_index))
    return losses


@dataclass
class LossBreakdown:
    semantic: Tensor
    task: Optional[Tensor]
    pyramid: list = field(default_factory=list)
    total: Optional[Tensor] = None

    def values(self) -> dict:
        out = {"L": float(self.total.data), "L_S": float(self.semantic.data),
               "L_T": 0.0 if self.task is None else float(self.task.data)}
        for k, p in enumerate(self.pyramid, start=1):
            out[f"L_P{k}"] = float(p.data)
        return out


def total_loss(semantic: Tensor, task: Optional[Tensor], pyramid: Sequence[Tensor]) -> LossBreakdown:
    """L = L_S + L_T + sum_k L_Pk, with no weighting coefficients."""
    total = semantic
    if task is not None:
        total = total + task
    for p in pyramid:
        total = total + p
    return LossBreakdown(semantic, task, list(pyramid), total)


def task_loss(kind: TaskKind, pred: Tensor, batch, weights=None,
              ignore_index: int = IGNORE_INDEX, beta: Optional[float] = None) -> Tensor:
    kind = TaskKind.parse(kind)
    if kind is TaskKind.SEMANTIC:
        return softmax_cross_entropy(pred, batch.labels, getattr(weights, "alpha", weights), ignore_index)
    if kind is TaskKind.DEPTH:
        return depth_loss(pred, batch.depth, beta)
    if batch.normals is None:
        raise DataError("normal-guided training needs surface normals in the dataset")
    return normal_loss(pred, batch.normals, beta=beta)


def compute_losses(output: DecoderOutput, batch, weights=None, task_kind=None,
                   ignore_index: int = IGNORE_INDEX) -> LossBreakdown:
    """Assemble every term of the objective for one batch."""
    alpha = getattr(weights, "alpha", weights)
    semantic = softmax_cross_entropy(output.final_logits, batch.labels, alpha, ignore_index)
    task = None
    if output.secondary_pred is not None and task_kind is not None:
        task = task_loss(task_kind, output.secondary_pred, batch, weights, ignore_index)
    pyramid = pyramid_loss(output.side_outputs, batch.labels, alpha, ignore_index)
    return total_loss(semantic, task, pyramid)
