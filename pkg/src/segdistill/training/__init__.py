"""Joint and ID-only training with early stopping, plus evaluation metrics."""

from .losses import (
    ID_ONLY,
    MAX_EPOCHS,
    PATIENCE,
    EarlyStopper,
    JointBatchOutputs,
    JointBatchTargets,
    LossWeights,
    combine_losses,
    joint_loss,
)
from .loop import (
    METRICS_COLUMNS,
    EpochRecord,
    TrainConfig,
    TrainingDivergedError,
    TrainingReport,
    train_id_only,
    train_joint,
    validation_losses,
    write_metrics_csv,
)
from .metrics import SegMetrics, evaluate_id, evaluate_seg, id_accuracy, predict_id, predict_seg, seg_metrics

__all__ = [
    "ID_ONLY", "MAX_EPOCHS", "METRICS_COLUMNS", "PATIENCE", "EarlyStopper", "EpochRecord",
    "JointBatchOutputs", "JointBatchTargets", "LossWeights", "SegMetrics", "TrainConfig",
    "TrainingDivergedError", "TrainingReport", "combine_losses", "evaluate_id", "evaluate_seg",
    "id_accuracy", "joint_loss", "predict_id", "predict_seg", "seg_metrics", "train_id_only",
    "train_joint", "validation_losses", "write_metrics_csv",
]
