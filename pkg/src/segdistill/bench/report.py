"""Results tables (CSV + aligned text) and figures."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

RESULTS_COLUMNS = ("network", "params_inference", "params_train", "test_accuracy")
SUMMARY_COLUMNS = ("network", "seeds", "mean_accuracy", "min_accuracy", "max_accuracy")
# PNG metadata without the matplotlib version keeps figures byte-stable across installs.
_PNG_META = {"Software": None}


@dataclass(frozen=True)
class ResultRow:
    network: str
    params_inference: int
    params_train: int | None  # set only when training used extra (teacher) parameters
    test_accuracy: float

    def __post_init__(self):
        if not 0.0 <= self.test_accuracy <= 1.0:
            raise ValueError(f"accuracy {self.test_accuracy} outside [0, 1]")


def human_count(n: int) -> str:
    if n >= 1_000_000:
        return f"{n / 1e6:.1f}M"
    if n >= 1_000:
        return f"{n / 1e3:.1f}K"
    return str(n)


def param_cell(row: ResultRow) -> str:
    if row.params_train is None:
        return human_count(row.params_inference)
    return f"{human_count(row.params_inference)} ({human_count(row.params_train)} +Seg)"


def write_results_csv(rows: list[ResultRow], path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_COLUMNS)
        for r in rows:
            w.writerow([r.network, r.params_inference, "" if r.params_train is None else r.params_train,
                        f"{r.test_accuracy:.3f}"])
    return path


FIT_COLUMNS = ("network", "train_accuracy", "test_accuracy", "gap_points", "epochs", "best_epoch", "stop_reason")


def write_fit_csv(reports: dict, path) -> Path:
    """Train vs test ID accuracy per arm, to make overfitting visible."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FIT_COLUMNS)
        for name, rep in reports.items():
            tr, te = rep.train_metrics["id_accuracy"], rep.test_metrics["id_accuracy"]
            w.writerow([name, f"{tr:.4f}", f"{te:.4f}", f"{100 * (tr - te):.1f}", rep.epochs_run,
                        rep.best_epoch, rep.stop_reason])
    return path


def _align(header: list[str], body: list[list[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *body)]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip() for row in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def render_table(rows: list[ResultRow], title: str | None = None) -> str:
    body = [[r.network, param_cell(r), f"{100 * r.test_accuracy:.1f}%"] for r in rows]
    text = _align(["Network", "Parameters", "Test Accuracy"], body)
    return (title + "\n" + text) if title else text


def summarize(tables: dict[int, list[ResultRow]]) -> list[dict]:
    """Per-arm mean/min/max accuracy across seeds, in first-table arm order."""
    order = [r.network for r in next(iter(tables.values()))]
    out = []
    for name in order:
        accs = [r.test_accuracy for rows in tables.values() for r in rows if r.network == name]
        out.append({"network": name, "seeds": len(accs), "mean_accuracy": sum(accs) / len(accs),
                    "min_accuracy": min(accs), "max_accuracy": max(accs)})
    return out


def write_summary(summary: list[dict], csv_path, txt_path) -> None:
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for s in summary:
            w.writerow([s["network"], s["seeds"], f"{s['mean_accuracy']:.3f}",
                        f"{s['min_accuracy']:.3f}", f"{s['max_accuracy']:.3f}"])
    body = [[s["network"], str(s["seeds"]), f"{100 * s['mean_accuracy']:.1f}%",
             f"{100 * s['min_accuracy']:.1f}%", f"{100 * s['max_accuracy']:.1f}%"] for s in summary]
    Path(txt_path).write_text(_align(["Network", "Seeds", "Mean", "Min", "Max"], body))


def plot_loss_curves(reports: dict, path) -> Path:
    """Train (solid) and validation (dashed) loss per arm, best epoch marked."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    for i, (name, rep) in enumerate(reports.items()):
        color = f"C{i}"
        epochs = [r.epoch for r in rep.records]
        ax.plot(epochs, [r.train_loss for r in rep.records], color=color, label=f"{name} train")
        ax.plot(epochs, [r.val_loss for r in rep.records], color=color, ls="--", label=f"{name} val")
        ax.axvline(rep.best_epoch, color=color, lw=0.6, alpha=0.5)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)


def plot_accuracy(summary: list[dict], path) -> Path:
    """Mean test accuracy per arm with min/max whiskers."""
    names = [s["network"] for s in summary]
    mean = [100 * s["mean_accuracy"] for s in summary]
    lo = [m - 100 * s["min_accuracy"] for m, s in zip(mean, summary)]
    hi = [100 * s["max_accuracy"] - m for m, s in zip(mean, summary)]
    fig, ax = plt.subplots(figsize=(1.4 * len(names) + 2, 3.6))
    ax.bar(names, mean, yerr=[lo, hi], capsize=4, color=[f"C{i}" for i in range(len(names))])
    for x, m in enumerate(mean):
        ax.text(x, m / 2, f"{m:.1f}%", ha="center", color="white", fontsize=8)
    ax.set_ylabel("test accuracy (%)")
    ax.set_ylim(0, 100)
    ax.tick_params(axis="x", labelsize=8)
    ax.spines[["top", "right"]].set_visible(False)
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return Path(path)
