"""Benchmark pipeline: data, per-arm training, pruning and results."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, replace
from pathlib import Path

from ..models import (
    IdHeadConfig,
    build_id_network,
    build_joint,
    count_parameters,
    default_decoder,
    prune_teacher,
    save_model,
)
from ..synthfaces import Dataset, generate_dataset, save_dataset, split
from ..training import TrainingReport, train_id_only, train_joint, write_metrics_csv
from .config import ArmSpec, ExperimentConfig
from .report import (
    ResultRow,
    plot_accuracy,
    plot_loss_curves,
    render_table,
    summarize,
    write_fit_csv,
    write_results_csv,
    write_summary,
)

log = logging.getLogger("segdistill")
MODEL_SUFFIX = ".sdm"


class ArmFailedError(RuntimeError):
    def __init__(self, arm: str, cause: BaseException):
        super().__init__(f"arm {arm!r} failed: {cause}")
        self.arm = arm


@dataclass
class ArmResult:
    row: ResultRow
    report: TrainingReport
    net: object  # trained network (joint arms: before pruning)


def build_arm_network(arm: ArmSpec, resolution: int, identities: int, seed: int):
    head = IdHeadConfig(classes=identities, feature_width=arm.head_width)
    if arm.kind == "joint":
        dec = default_decoder(arm.encoder, resolution, arm.seg_classes, base_width=arm.decoder_width)
        return build_joint(arm.encoder, dec, head, resolution, seed)
    return build_id_network(arm.encoder, head, resolution, seed)


def train_arm(arm: ArmSpec, dataset: Dataset, seed: int, out_dir: Path | None = None,
              timing: bool = False) -> ArmResult:
    """Train one arm; joint arms are pruned and the pruned model is what gets saved."""
    splits = dataset.splits()
    net = build_arm_network(arm, dataset.resolution, dataset.identity_count, seed)
    cfg = replace(arm.train, seed=seed)

    def progress(rec):
        log.info("%s epoch %d: train %.4f val %.4f val_acc %.3f", arm.name, rec.epoch,
                 rec.train_loss, rec.val_loss, rec.val_id_acc)

    trainer = train_joint if arm.kind == "joint" else train_id_only
    report = trainer(net, splits, cfg, on_epoch=progress)
    if arm.kind == "joint":
        inference_net = prune_teacher(net)
        row = ResultRow(arm.name, count_parameters(inference_net), count_parameters(net),
                        report.test_metrics["id_accuracy"])
    else:
        inference_net = net
        row = ResultRow(arm.name, count_parameters(net), None, report.test_metrics["id_accuracy"])
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        save_model(inference_net, out_dir / f"{_slug(arm.name)}{MODEL_SUFFIX}")
        write_metrics_csv(report, out_dir / f"{_slug(arm.name)}_metrics.csv", timing=timing)
    return ArmResult(row, report, net)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def make_dataset(config: ExperimentConfig, run_seed: int) -> Dataset:
    spec = config.dataset
    dseed = spec.seed if spec.seed is not None else run_seed
    ds = generate_dataset(spec.identities, spec.views, spec.resolution, seed=dseed)
    split(ds, dseed)
    return ds


def splits_digest(dataset: Dataset) -> str:
    h = hashlib.sha256()
    for name, tag in zip(dataset.sample_names, dataset.split):
        h.update(f"{name},{tag}\n".encode())
    return h.hexdigest()


def run_seed(config: ExperimentConfig, seed: int, out_dir: Path, timing: bool = False,
             save_data: bool = False) -> list[ResultRow]:
    """All arms on one dataset/split. Results are rewritten after every arm."""
    out_dir.mkdir(parents=True, exist_ok=True)
    ds = make_dataset(config, seed)
    if save_data:
        save_dataset(ds, out_dir / "data")
    (out_dir / "splits.sha256").write_text(splits_digest(ds) + "\n")
    rows: list[ResultRow] = []
    reports: dict[str, TrainingReport] = {}
    for arm in config.arms:
        log.info("seed %d: training %s", seed, arm.name)
        try:
            result = train_arm(arm, ds, seed, out_dir, timing)
        except Exception as e:
            raise ArmFailedError(arm.name, e) from e
        rows.append(result.row)
        reports[arm.name] = result.report
        write_results_csv(rows, out_dir / "results.csv")
        (out_dir / "table.txt").write_text(render_table(rows, f"seed {seed}"))
        write_fit_csv(reports, out_dir / "fit.csv")
    plot_loss_curves(reports, out_dir / "loss_curves.png")
    return rows


def run_benchmark(config: ExperimentConfig, seeds: list[int], out: Path, timing: bool = False,
                  save_data: bool = False) -> tuple[dict[int, list[ResultRow]], list[dict]]:
    out.mkdir(parents=True, exist_ok=True)
    tables: dict[int, list[ResultRow]] = {}
    for s in seeds:
        tables[s] = run_seed(config, s, out / f"seed-{s}", timing, save_data)
    summary = summarize(tables)
    write_summary(summary, out / "summary.csv", out / "summary.txt")
    plot_accuracy(summary, out / "accuracy.png")
    return tables, summary
