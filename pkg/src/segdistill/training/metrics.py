"""Evaluation for both tasks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor

EVAL_BATCH = 64


def id_accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Top-1 accuracy; ``np.argmax`` already resolves ties to the lowest index."""
    if len(labels) == 0:
        raise ValueError("cannot score an empty split")
    return float(np.mean(np.argmax(probs, axis=-1) == np.asarray(labels)))


@dataclass(frozen=True)
class SegMetrics:
    pixel_accuracy: float
    iou: tuple[float, ...]  # nan where the class is absent from both masks
    mean_iou: float


def seg_metrics(pred: np.ndarray, true: np.ndarray, classes: int) -> SegMetrics:
    pred, true = np.asarray(pred), np.asarray(true)
    if pred.shape != true.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {true.shape}")
    if pred.size == 0:
        raise ValueError("cannot score an empty split")
    idx = true.astype(np.int64).ravel() * classes + pred.astype(np.int64).ravel()
    confusion = np.bincount(idx, minlength=classes * classes).reshape(classes, classes)
    inter = np.diag(confusion).astype(np.float64)
    union = confusion.sum(0) + confusion.sum(1) - inter
    iou = np.where(union > 0, inter / np.maximum(union, 1), np.nan)
    present = ~np.isnan(iou)
    miou = float(iou[present].mean()) if present.any() else float("nan")
    return SegMetrics(float(inter.sum() / pred.size), tuple(float(v) for v in iou), miou)


def predict_id(net, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    out = [net.forward_id(Tensor(images[i : i + batch_size])).data
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out)


def predict_seg(net, images: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Per-pixel argmax class map, [N,H,W]."""
    out = [np.argmax(net.forward(Tensor(images[i : i + batch_size]))[1].data, axis=-1)
           for i in range(0, len(images), batch_size)]
    return np.concatenate(out).astype(np.uint8)


def evaluate_id(net, split) -> float:
    if len(split) == 0:
        raise ValueError(f"split {split.name!r} is empty")
    return id_accuracy(predict_id(net, split.images), split.labels)


def evaluate_seg(net, split, classes: int | None = None) -> SegMetrics:
    if getattr(net, "kind", None) != "joint":
        raise ValueError("segmentation metrics need a network with a decoder")
    if len(split) == 0:
        raise ValueError(f"split {split.name!r} is empty")
    classes = classes or net.decoder.cfg.seg_classes
    return seg_metrics(predict_seg(net, split.images), split.masks, classes)
