"""Segmentation objective (cross-entropy + Lovasz hinge) and evaluation metrics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ordnet import tensor as T
from ordnet.errors import ArgumentError, DimensionError
from ordnet.tensor import Tensor

IGNORE_LABEL = 255


@dataclass
class LossConfig:
    alpha_ce: float = 1.0
    alpha_iou: float = 1.0
    ignore_label: int = IGNORE_LABEL

    def __post_init__(self):
        if self.alpha_ce < 0 or self.alpha_iou < 0:
            raise ArgumentError("loss weights must be non-negative")


class AllIgnoredWarning(UserWarning):
    pass


def _check(logits: Tensor, labels: np.ndarray) -> None:
    if logits.ndim != 3 or logits.shape[:2] != labels.shape:
        raise DimensionError(f"logits {logits.shape} do not match label map {labels.shape}")


def cross_entropy(logits: Tensor, labels, ignore_label: int = IGNORE_LABEL) -> Tensor:
    """Mean ``-log softmax(logits)[true class]`` over non-ignored pixels.

    Returns 0 (with an :class:`AllIgnoredWarning`) when nothing is labelled.
    """
    labels = np.asarray(labels)
    _check(logits, labels)
    k = logits.shape[-1]
    valid = labels != ignore_label
    n = int(valid.sum())
    if n == 0:
        warnings.warn("every pixel carries the ignore label", AllIgnoredWarning, stacklevel=2)
        return T.scale(T.sum_(logits), 0.0)
    onehot = np.zeros(logits.shape)
    rows, cols = np.nonzero(valid)
    onehot[rows, cols, labels[valid].astype(np.int64)] = 1.0
    picked = T.sum_(T.mul(T.log_softmax(logits, axis=-1), Tensor(onehot)))
    return T.scale(picked, -1.0 / n)


def lovasz_grad(gt_sorted: np.ndarray) -> np.ndarray:
    """Increments of the Jaccard loss along a sorted ground-truth indicator."""
    gts = gt_sorted.sum()
    intersection = gts - np.cumsum(gt_sorted)
    union = gts + np.cumsum(1.0 - gt_sorted)
    jaccard = 1.0 - intersection / union
    if len(gt_sorted) > 1:
        jaccard[1:] = jaccard[1:] - jaccard[:-1]
    return jaccard


def lovasz_hinge_flat(scores: Tensor, gt: np.ndarray) -> Tensor:
    """Binary Lovasz hinge over a flat vector of signed scores."""
    if scores.size == 0:
        return Tensor(0.0)
    signs = 2.0 * gt - 1.0
    errors = T.add(T.scale(T.mul(scores, Tensor(signs)), -1.0), 1.0)
    order = np.argsort(-errors.data, kind="stable")
    grad = lovasz_grad(gt[order].astype(np.float64))
    return T.sum_(T.mul(T.relu(T.take(errors, order)), Tensor(grad)))


def lovasz_surrogate(logits: Tensor, labels, ignore_label: int = IGNORE_LABEL) -> Tensor:
    """Per-class Lovasz hinge on each class's logit channel, averaged over classes."""
    labels = np.asarray(labels)
    _check(logits, labels)
    h, w, k = logits.shape
    valid = (labels != ignore_label).reshape(-1)
    flat = T.reshape(logits, (h * w, k))
    lab = labels.reshape(-1)[valid]
    idx_valid = np.nonzero(valid)[0]
    total = None
    for c in range(k):
        scores = T.take(flat, idx_valid * k + c)
        term = lovasz_hinge_flat(scores, (lab == c).astype(np.float64))
        total = term if total is None else T.add(total, term)
    return T.scale(total, 1.0 / k)


def full_loss(logits: Tensor, labels, cfg: LossConfig = LossConfig()) -> Tensor:
    out = T.scale(cross_entropy(logits, labels, cfg.ignore_label), cfg.alpha_ce)
    if cfg.alpha_iou != 0:
        out = T.add(out, T.scale(lovasz_surrogate(logits, labels, cfg.ignore_label), cfg.alpha_iou))
    return out


# ------------------------------------------------------------------ metrics


def confusion_matrix(pred, labels, k: int, ignore_label: int = IGNORE_LABEL) -> np.ndarray:
    """``k x k`` counts, rows = ground truth, columns = prediction."""
    pred = np.asarray(pred).reshape(-1)
    labels = np.asarray(labels).reshape(-1)
    if pred.shape != labels.shape:
        raise DimensionError(f"prediction has {pred.size} pixels, labels have {labels.size}")
    keep = (labels != ignore_label) & (pred != ignore_label)
    return np.bincount(labels[keep].astype(np.int64) * k + pred[keep].astype(np.int64),
                       minlength=k * k).reshape(k, k)


def iou_from_confusion(cm: np.ndarray) -> tuple:
    """Per-class IoU (NaN where a class is absent from both maps) and their mean."""
    inter = np.diag(cm).astype(np.float64)
    union = cm.sum(0) + cm.sum(1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        iou = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    present = ~np.isnan(iou)
    miou = float(iou[present].mean()) if present.any() else float("nan")
    return iou, miou


def jaccard_metric(pred, labels, k: int, ignore_label: int = IGNORE_LABEL) -> tuple:
    return iou_from_confusion(confusion_matrix(pred, labels, k, ignore_label))


def pixel_accuracy(pred, labels, ignore_label: int = IGNORE_LABEL) -> float:
    pred = np.asarray(pred)
    labels = np.asarray(labels)
    valid = labels != ignore_label
    n = int(valid.sum())
    return float((pred[valid] == labels[valid]).sum() / n) if n else float("nan")
