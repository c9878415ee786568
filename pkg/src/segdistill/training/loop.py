"""Training loops for the joint (teacher-task) and ID-only arms."""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from ..autodiff import GradTape, OptimizerState, Tensor, optimizer_step
from ..models import count_parameters, restore_snapshot, state_snapshot
from .losses import (
    MAX_EPOCHS,
    PATIENCE,
    EarlyStopper,
    JointBatchOutputs,
    JointBatchTargets,
    LossWeights,
    joint_loss,
)
from .metrics import EVAL_BATCH, evaluate_id, evaluate_seg, id_accuracy

MONITORS = ("joint", "id")
METRICS_COLUMNS = ("epoch", "train_loss", "val_loss", "val_id_acc", "val_seg_pixacc", "seconds", "note")


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"non-finite training loss {loss} at epoch {epoch}, batch {batch}")
        self.epoch, self.batch = epoch, batch


@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = MAX_EPOCHS
    patience: int = PATIENCE
    batch_size: int = 16
    lr: float = 1e-3
    seed: int = 0
    loss_weights: LossWeights = LossWeights()
    monitor: str = "joint"  # validation loss used for stopping

    def __post_init__(self):
        if not 1 <= self.max_epochs <= MAX_EPOCHS:
            raise ValueError(f"max_epochs must be in 1..{MAX_EPOCHS}, got {self.max_epochs}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.monitor not in MONITORS:
            raise ValueError(f"monitor must be one of {MONITORS}, got {self.monitor!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_id_acc: float
    val_seg_pixacc: float | None
    val_id_ce: float
    seconds: float = field(default=0.0, compare=False)


@dataclass
class TrainingReport:
    records: list[EpochRecord]
    stop_reason: str
    best_epoch: int
    test_metrics: dict = field(default_factory=dict)
    train_metrics: dict = field(default_factory=dict)  # best weights scored on the training split
    params: dict = field(default_factory=dict)  # train / inference / decoder
    diagnostic: str = ""

    @property
    def epochs_run(self) -> int:
        return len(self.records)

    @property
    def best_record(self) -> EpochRecord:
        return self.records[self.best_epoch - 1]


def _onehot_masks(masks: np.ndarray, classes: int) -> np.ndarray:
    return np.eye(classes, dtype=np.float32)[masks]


def validation_losses(net, split, weights: LossWeights, seg_classes: int | None = None,
                      batch_size: int = EVAL_BATCH) -> tuple[float, float, np.ndarray, np.ndarray | None]:
    """Inference-mode pass: (joint loss, ID CE, ID probs, seg argmax or None).

    Loss terms are averaged over samples, matching the batch-mean training loss.
    """
    joint = net.kind == "joint" and weights.lambda_seg > 0
    n = len(split)
    classes = net.id_classes
    ce_id_sum = ce_seg_sum = 0.0
    probs, seg = [], []
    for i in range(0, n, batch_size):
        x = Tensor(split.images[i : i + batch_size])
        y_id_t = np.eye(classes, dtype=np.float32)[split.labels[i : i + batch_size]]
        if joint:
            y_id, y_seg = net.forward(x)
            y_seg_t = _onehot_masks(split.masks[i : i + batch_size], seg_classes or y_seg.shape[-1])
            ce_seg_sum += joint_loss(JointBatchOutputs(y_seg, y_seg), JointBatchTargets(y_seg_t, y_seg_t),
                                     LossWeights(1.0, 0.0)).item() * len(x.data)
            seg.append(np.argmax(y_seg.data, axis=-1))
        else:
            y_id = net.forward_id(x)
        ce_id_sum += joint_loss(JointBatchOutputs(y_id, None), JointBatchTargets(y_id_t, None),
                                LossWeights(0.0, 1.0)).item() * len(x.data)
        probs.append(y_id.data)
    ce_id, ce_seg = ce_id_sum / n, ce_seg_sum / n
    total = weights.lambda_id * ce_id + (weights.lambda_seg * ce_seg if joint else 0.0)
    return total, ce_id, np.concatenate(probs), (np.concatenate(seg) if joint else None)


def _run(net, splits, cfg: TrainConfig, weights: LossWeights,
         on_epoch: Callable[[EpochRecord], None] | None) -> TrainingReport:
    if len(splits.train) == 0 or len(splits.val) == 0:
        raise ValueError("train and validation splits must be non-empty")
    res = splits.train.images.shape[1]
    if res != net.input_resolution:
        raise ValueError(f"network expects {net.input_resolution}x{net.input_resolution} inputs, "
                         f"data is {res}x{res}")
    use_seg = net.kind == "joint" and weights.lambda_seg > 0
    seg_classes = net.decoder.cfg.seg_classes if net.kind == "joint" else None
    if seg_classes is not None and splits.seg_classes != seg_classes:
        raise ValueError(f"decoder predicts {seg_classes} classes, data has {splits.seg_classes}")

    params = net.named_parameters()
    opt = OptimizerState(lr=cfg.lr)
    stopper = EarlyStopper(cfg.patience)
    eye_id = np.eye(net.id_classes, dtype=np.float32)
    train = splits.train
    records: list[EpochRecord] = []
    best_state = state_snapshot(net)

    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train))
        loss_sum = 0.0
        for b, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            x = Tensor(train.images[idx])
            targets = JointBatchTargets(eye_id[train.labels[idx]],
                                        _onehot_masks(train.masks[idx], seg_classes) if use_seg else None)
            with GradTape() as tape:
                if use_seg:
                    outputs = JointBatchOutputs(*net.forward(x, training=True))
                else:
                    outputs = JointBatchOutputs(net.forward_id(x, training=True), None)
                loss = joint_loss(outputs, targets, weights)
            value = loss.item()
            if not math.isfinite(value):
                raise TrainingDivergedError(epoch, b, value)
            grads = tape.backward(loss)
            named = {k: grads[t] for k, t in params.items() if t in grads}
            for t in params.values():
                t.grad = None
            optimizer_step(params, named, opt)
            loss_sum += value * len(idx)

        val_loss, val_ce_id, probs, seg = validation_losses(net, splits.val, weights, seg_classes)
        seg_acc = float(np.mean(seg == splits.val.masks)) if seg is not None else None
        rec = EpochRecord(epoch, loss_sum / len(train), val_loss, id_accuracy(probs, splits.val.labels),
                          seg_acc, val_ce_id, time.perf_counter() - t0)
        records.append(rec)
        if on_epoch:
            on_epoch(rec)
        decision = stopper.update(epoch, val_loss if cfg.monitor == "joint" else val_ce_id)
        if stopper.improved_last:
            best_state = state_snapshot(net)
        if decision == "stop":
            break
    else:
        stopper.exhaust()

    restore_snapshot(net, best_state)
    counts = count_parameters(net, partition=True)
    report = TrainingReport(
        records,
        stopper.reason,
        stopper.best_epoch,
        params={"train": counts["total"], "inference": counts["encoder"] + counts["head"],
                "decoder": counts["decoder"]},
        diagnostic=stopper.diagnostic,
    )
    report.train_metrics["id_accuracy"] = evaluate_id(net, splits.train)
    if len(splits.test):
        report.test_metrics["id_accuracy"] = evaluate_id(net, splits.test)
        if net.kind == "joint":
            m = evaluate_seg(net, splits.test)
            report.test_metrics.update(seg_pixel_accuracy=m.pixel_accuracy, seg_miou=m.mean_iou)
    return report


def train_joint(net, splits, cfg: TrainConfig = TrainConfig(),
                on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainingReport:
    """Train on the weighted ID + segmentation loss; the network ends at its best epoch's weights."""
    if net.kind != "joint":
        raise ValueError("train_joint needs a network with a segmentation decoder")
    return _run(net, splits, cfg, cfg.loss_weights, on_epoch)


def train_id_only(net, splits, cfg: TrainConfig = TrainConfig(),
                  on_epoch: Callable[[EpochRecord], None] | None = None) -> TrainingReport:
    """Same loop with the segmentation term removed; ``net`` is an encoder + ID head."""
    if net.kind != "id":
        raise ValueError("train_id_only expects an ID-only network (encoder + head)")
    weights = LossWeights(0.0, cfg.loss_weights.lambda_id or 1.0)
    return _run(net, splits, cfg, weights, on_epoch)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_metrics_csv(report: TrainingReport, path, timing: bool = False) -> Path:
    """One row per epoch. ``seconds`` is 0 unless ``timing`` so that reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        last = len(report.records)
        for r in report.records:
            notes = []
            if r.epoch == report.best_epoch:
                notes.append("best")
            if r.epoch == last:
                notes.append(f"restored:{report.best_epoch}")
            w.writerow([r.epoch, _fmt(r.train_loss), _fmt(r.val_loss), _fmt(r.val_id_acc),
                        _fmt(r.val_seg_pixacc), _fmt(r.seconds if timing else 0.0), ";".join(notes)])
    return path
