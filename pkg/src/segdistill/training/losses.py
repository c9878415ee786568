"""Weighted joint loss and the early-stopping rule."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..autodiff import Tensor, categorical_cross_entropy, ops

MAX_EPOCHS = 125
PATIENCE = 20


@dataclass(frozen=True)
class LossWeights:
    lambda_seg: float = 1.0
    lambda_id: float = 0.1

    def __post_init__(self):
        if self.lambda_seg < 0 or self.lambda_id < 0:
            raise ValueError(f"loss weights must be non-negative, got {self}")
        if self.lambda_seg == 0 and self.lambda_id == 0:
            raise ValueError("loss weights cannot both be zero")


ID_ONLY = LossWeights(0.0, 1.0)


class JointBatchOutputs(NamedTuple):
    y_id: Tensor
    y_seg: Tensor | None


class JointBatchTargets(NamedTuple):
    y_id: np.ndarray
    y_seg: np.ndarray | None


def combine_losses(ce_seg, ce_id, w: LossWeights):
    """``lambda_seg * ce_seg + lambda_id * ce_id``.

    Works on plain numbers or on tensors. A zero weight drops its term
    entirely, so nothing upstream of it receives a gradient.
    """
    terms = [(w.lambda_seg, ce_seg), (w.lambda_id, ce_id)]
    terms = [(lam, ce) for lam, ce in terms if lam != 0]
    if any(isinstance(ce, Tensor) for _, ce in terms):
        total = None
        for lam, ce in terms:
            term = ce if lam == 1 else ops.mul(ce, lam)
            total = term if total is None else ops.add(total, term)
        return total
    return sum(lam * ce for lam, ce in terms)


def joint_loss(outputs: JointBatchOutputs, targets: JointBatchTargets, w: LossWeights) -> Tensor:
    """Weighted sum of the segmentation CE (mean over batch and pixels) and ID CE (mean over batch)."""
    ce_id = categorical_cross_entropy(outputs.y_id, targets.y_id) if w.lambda_id else None
    ce_seg = None
    if w.lambda_seg:
        if outputs.y_seg is None or targets.y_seg is None:
            raise ValueError("lambda_seg > 0 but no segmentation output/target was given")
        ce_seg = categorical_cross_entropy(outputs.y_seg, targets.y_seg)
    return combine_losses(ce_seg, ce_id, w)


class EarlyStopper:
    """Patience on strict improvement of the monitored validation loss.

    ``update`` takes 1-based epochs and returns ``"continue"`` or ``"stop"``;
    ``reason`` is then one of ``"patience"``, ``"non-finite"``, or ``"exhausted"``
    (the latter set by the caller via :meth:`exhaust`).
    """

    def __init__(self, patience: int = PATIENCE):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best_loss = math.inf
        self.best_epoch = 0
        self.stale = 0
        self.reason: str | None = None
        self.diagnostic = ""

    def update(self, epoch: int, val_loss: float) -> str:
        if not math.isfinite(val_loss):
            self.reason = "non-finite"
            self.diagnostic = f"validation loss {val_loss} at epoch {epoch}"
            return "stop"
        if val_loss < self.best_loss:
            self.best_loss, self.best_epoch, self.stale = val_loss, epoch, 0
            return "continue"
        self.stale += 1
        if self.stale >= self.patience:
            self.reason = "patience"
            return "stop"
        return "continue"

    @property
    def improved_last(self) -> bool:
        return self.stale == 0 and self.best_epoch > 0

    def exhaust(self) -> None:
        self.reason = "exhausted"
