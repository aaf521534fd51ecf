"""Run artifacts: delimited outputs plus matplotlib figures rendered to files.

Every report is written twice: a CSV for machines and a PNG learning-curve
figure next to it for humans. CSV cell values are exact fractions formatted
with repr-stable floats, so two identical runs emit byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .evaluator import EvalReport
from .trainer import TrainConfig, TrainLog, train_curve_rows


def _fmt(value: float | int | None) -> str:
    if value is None:
        return "NA"
    return f"{value:g}"


def write_train_curve(cfg: TrainConfig, log: TrainLog, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    rows = train_curve_rows(cfg, log)
    path = out / "train_curve.csv"
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        task_ids = [t.id for t in cfg.tasks]
        writer.writerow(["iteration", *task_ids, "mean"])
        for row in rows:
            writer.writerow([row["iteration"], *(_fmt(row[t]) for t in task_ids), _fmt(row["mean"])])

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot([r["iteration"] for r in rows], [r["mean"] for r in rows], marker="o", color="tab:blue")
    ax.set_xlabel("training iteration")
    ax.set_ylabel("mean rollout success")
    ax.set_ylim(-0.05, 1.05)
    ax.set_title(f"training success per iteration ({cfg.mode})")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "train_curve.png", dpi=120)
    plt.close(fig)
    return path


def write_eval_matrix(report: EvalReport, out_dir: str | Path) -> Path:
    out = Path(out_dir)
    path = out / "eval_matrix.csv"
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["task_id", *(str(s) for s in report.snapshots)])
        for task_id in report.task_ids:
            writer.writerow(
                [task_id, *(_fmt(report.cells[(task_id, s)]) for s in report.snapshots)]
            )
    return path


def write_eval_curve(report: EvalReport, out_dir: str | Path, *, label: str = "") -> Path:
    out = Path(out_dir)
    means = report.snapshot_means()
    path = out / "eval_curve.csv"
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["snapshot", "mean_sr"])
        for snapshot in report.snapshots:
            writer.writerow([snapshot, _fmt(means[snapshot])])

    fig, ax = plt.subplots(figsize=(7, 4))
    for task_id in report.task_ids:
        values = [report.cells[(task_id, s)] for s in report.snapshots]
        ax.plot(
            report.snapshots,
            [v if v is not None else 0.0 for v in values],
            color="tab:gray",
            alpha=0.35,
            linewidth=1,
        )
    ax.plot(
        report.snapshots,
        [means[s] for s in report.snapshots],
        marker="o",
        color="tab:red",
        linewidth=2,
        label="mean SR",
    )
    ax.set_xlabel("memory snapshot (training iteration)")
    ax.set_ylabel("success rate")
    ax.set_ylim(-0.05, 1.05)
    title = "success rate across snapshots"
    if label:
        title += f" ({label})"
    ax.set_title(title)
    ax.legend(loc="lower right")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "eval_curve.png", dpi=120)
    plt.close(fig)
    return path
