"""``segdistill`` command line.

Exit codes: 0 success, 2 usage or configuration error, 3 domain error
(bad model or dataset files, incompatible shapes, pruning a pruned model,
a failed benchmark arm).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..autodiff import ShapeError
from ..models import ModelFormatError, NoDecoderError, count_parameters, load_model, prune_teacher, save_model
from ..synthfaces import DatasetFormatError, SplitError, generate_dataset, load_external, save_dataset, split
from ..training import TrainingDivergedError, evaluate_id, evaluate_seg, write_metrics_csv
from ..training.loop import MAX_EPOCHS
from .config import PRESETS, ConfigError, desk_config, load_config
from .pipeline import MODEL_SUFFIX, ArmFailedError, run_benchmark, train_arm
from .report import plot_loss_curves, render_table

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN = 0, 2, 3
ARM_ALIASES = {"joint": "joint", "id-only": "id"}
log = logging.getLogger("segdistill")


class UsageError(Exception):
    pass


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _epochs(text: str) -> int:
    value = _positive_int(text)
    if value > MAX_EPOCHS:
        raise argparse.ArgumentTypeError(f"at most {MAX_EPOCHS} epochs, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="segdistill", description=__doc__.split("\n\n")[0])
    p.add_argument("--seed", type=int, default=0, help="run seed (data, init, shuffling)")
    p.add_argument("--out", type=Path, default=Path("segdistill-out"), help="output directory")
    p.add_argument("--config", type=Path, help="YAML experiment config")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="render a synthetic face dataset with masks and splits")
    g.add_argument("--ids", type=_positive_int, required=True)
    g.add_argument("--views", type=_positive_int, required=True)
    g.add_argument("--res", type=_positive_int, required=True)

    t = sub.add_parser("train", help="train one arm on a dataset directory")
    t.add_argument("--data", type=Path, required=True)
    t.add_argument("--arm", default="joint",
                   help="arm name from the config, or 'joint' / 'id-only' (default: joint)")
    t.add_argument("--epochs", type=_epochs, help="override max_epochs")
    t.add_argument("--timing", action="store_true", help="record wall time in the metrics CSV")

    r = sub.add_parser("prune", help="remove the segmentation decoder from a joint model")
    r.add_argument("model", type=Path)
    r.add_argument("output", type=Path, nargs="?", help=f"default: <out>/pruned{MODEL_SUFFIX}")

    e = sub.add_parser("eval", help="evaluate a model on a dataset split")
    e.add_argument("--model", type=Path, required=True)
    e.add_argument("--data", type=Path, required=True)
    e.add_argument("--split", choices=("train", "val", "test"), default="test")

    b = sub.add_parser("benchmark", help="train, prune and evaluate every arm; write the results table")
    b.add_argument("--preset", choices=sorted(PRESETS), help="built-in arm list (default: desk)")
    b.add_argument("--sweep", type=_positive_int, metavar="N", help="run seeds seed..seed+N-1")
    b.add_argument("--epochs", type=_epochs, help="override max_epochs for every arm")
    b.add_argument("--save-data", action="store_true", help="also write each seed's dataset")
    b.add_argument("--timing", action="store_true", help="record wall time in the metrics CSVs")
    return p


def _experiment(args):
    if getattr(args, "preset", None) and args.config:
        raise UsageError("--preset and --config are mutually exclusive")
    if args.config:
        cfg = load_config(args.config)
    else:
        cfg = PRESETS[getattr(args, "preset", None) or "desk"]()
    if getattr(args, "epochs", None):
        cfg = cfg.with_overrides(max_epochs=args.epochs)
    return cfg


def cmd_generate(args) -> int:
    ds = generate_dataset(args.ids, args.views, args.res, seed=args.seed)
    try:
        split(ds, args.seed)
    except SplitError as e:
        raise UsageError(str(e)) from None
    save_dataset(ds, args.out)
    counts = {s: int((ds.split == s).sum()) for s in ("train", "val", "test")}
    print(f"wrote {len(ds)} samples ({args.ids} identities x {args.views} views, "
          f"{args.res}x{args.res}) to {args.out}")
    print("split: " + " ".join(f"{k}={v}" for k, v in counts.items()))
    return EXIT_OK


def _pick_arm(cfg, name: str):
    kind = ARM_ALIASES.get(name)
    if kind is None:
        return cfg.arm(name)
    matches = [a for a in cfg.arms if a.kind == kind]
    if not matches:
        raise ConfigError(f"config has no {kind!r} arm for --arm {name}")
    return matches[0]


def _load_split_dataset(path: Path, seed: int):
    ds = load_external(path)
    if ds.split is None:
        split(ds, seed)
    return ds


def cmd_train(args) -> int:
    cfg = _experiment(args)
    arm = _pick_arm(cfg, args.arm)
    ds = _load_split_dataset(args.data, args.seed)
    result = train_arm(arm, ds, args.seed, timing=args.timing)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    save_model(result.net, out / f"model{MODEL_SUFFIX}")
    write_metrics_csv(result.report, out / "metrics.csv", timing=args.timing)
    plot_loss_curves({arm.name: result.report}, out / "loss_curve.png")
    rep = result.report
    lines = [
        f"arm: {arm.name} ({arm.kind})",
        f"epochs: {rep.epochs_run} (stopped: {rep.stop_reason}; best epoch {rep.best_epoch}, restored)",
        f"params: train={rep.params['train']} inference={rep.params['inference']} "
        f"decoder={rep.params['decoder']}",
    ]
    lines += [f"train {k}: {v:.3f}" for k, v in rep.train_metrics.items()]
    lines += [f"test {k}: {v:.3f}" for k, v in rep.test_metrics.items()]
    text = "\n".join(lines) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_prune(args) -> int:
    net = load_model(args.model)
    pruned = prune_teacher(net)
    dest = args.output or args.out / f"pruned{MODEL_SUFFIX}"
    save_model(pruned, dest)
    print(f"inference={count_parameters(pruned)} (train={count_parameters(net)} +Seg)")
    return EXIT_OK


def cmd_eval(args) -> int:
    net = load_model(args.model)
    ds = _load_split_dataset(args.data, args.seed)
    if ds.resolution != net.input_resolution:
        raise ShapeError(f"model expects {net.input_resolution}x{net.input_resolution} inputs, "
                         f"dataset is {ds.resolution}x{ds.resolution}")
    if ds.identity_count != net.id_classes:
        raise ShapeError(f"model has {net.id_classes} identity classes, dataset has {ds.identity_count}")
    if net.kind == "joint" and net.decoder.cfg.seg_classes != len(ds.palette):
        raise ShapeError(f"model segments {net.decoder.cfg.seg_classes} classes, "
                         f"dataset palette has {len(ds.palette)}")
    part = ds.subset(args.split)
    print(f"split: {args.split} ({len(part)} samples)")
    print(f"id_accuracy: {evaluate_id(net, part):.3f}")
    if net.kind == "joint":
        m = evaluate_seg(net, part)
        print(f"seg_pixel_accuracy: {m.pixel_accuracy:.3f}")
        print(f"seg_miou: {m.mean_iou:.3f}")
    return EXIT_OK


def cmd_benchmark(args) -> int:
    cfg = _experiment(args)
    if args.sweep:
        seeds = [args.seed + i for i in range(args.sweep)]
    else:
        seeds = list(cfg.seeds) if cfg.seeds else [args.seed]
    try:
        tables, summary = run_benchmark(cfg, seeds, args.out, args.timing, args.save_data)
    except ArmFailedError as e:
        print(f"error: {e} (completed results kept under {args.out})", file=sys.stderr)
        return EXIT_DOMAIN
    for s, rows in tables.items():
        print(render_table(rows, f"seed {s}"))
    if len(seeds) > 1:
        print((args.out / "summary.txt").read_text(), end="")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "train": cmd_train, "prune": cmd_prune, "eval": cmd_eval,
            "benchmark": cmd_benchmark}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (ModelFormatError, NoDecoderError, DatasetFormatError, SplitError, ShapeError,
            TrainingDivergedError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())
