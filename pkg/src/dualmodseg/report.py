"""Render run artifacts: CSV tables and matplotlib figures next to the JSON outputs."""

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def read_train_log(path):
    """Split a train_log.jsonl into per-step and per-eval record lists."""
    steps, evals = [], []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        record = json.loads(line)
        (evals if record.get("event") == "eval" else steps).append(record)
    return steps, evals


def write_metrics_csv(report, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patient_id", "dice", "sens"])
        for pid, vals in report.per_patient.items():
            writer.writerow([pid, f"{vals['dice']:.6f}", f"{vals['sens']:.6f}"])
        writer.writerow(["mean", f"{report.mean_dice:.6f}", f"{report.mean_sens:.6f}"])


def write_ablation_csv(result, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["enable_mem", "enable_cif", "dice", "sens"])
        for row in result.rows:
            writer.writerow(
                [row["enable_mem"], row["enable_cif"], f"{row['dice']:.6f}", f"{row['sens']:.6f}"]
            )


def plot_training_curves(log_path, fig_path) -> None:
    """Loss terms per step and, when present, the periodic test Dice."""
    steps, evals = read_train_log(log_path)
    if not steps:
        return
    xs = [r["step"] for r in steps]
    fig, axes = plt.subplots(1, 2 if evals else 1, figsize=(10 if evals else 6, 4))
    ax0 = axes[0] if evals else axes
    ax0.plot(xs, [r["l_final"] for r in steps], label="final", lw=1.0)
    ax0.plot(xs, [r["l_sup_total"] for r in steps], label="supervised", lw=0.8)
    ax0.plot(xs, [r["l_cons"] for r in steps], label="consistency", lw=0.8)
    ax0.set_xlabel("step")
    ax0.set_ylabel("loss")
    ax0.legend()
    ax0.set_title("training losses")
    if evals:
        ax1 = axes[1]
        ex = [r["step"] for r in evals]
        ax1.plot(ex, [r["dice"] for r in evals], marker="o", label="Dice")
        ax1.plot(ex, [r["sens"] for r in evals], marker="s", label="Sens")
        ax1.set_xlabel("step")
        ax1.set_ylim(0, 1)
        ax1.legend()
        ax1.set_title("test metrics")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def plot_per_patient(report, fig_path) -> None:
    """Per-patient Dice/Sensitivity bars."""
    pids = list(report.per_patient)
    dice = [report.per_patient[p]["dice"] for p in pids]
    sens = [report.per_patient[p]["sens"] for p in pids]
    x = range(len(pids))
    fig, ax = plt.subplots(figsize=(max(6, 0.6 * len(pids)), 4))
    ax.bar([i - 0.2 for i in x], dice, width=0.4, label="Dice")
    ax.bar([i + 0.2 for i in x], sens, width=0.4, label="Sens")
    ax.set_xticks(list(x))
    ax.set_xticklabels(pids, rotation=45, ha="right")
    ax.set_ylim(0, 1)
    ax.axhline(report.mean_dice, color="C0", ls="--", lw=0.8)
    ax.legend()
    ax.set_title("per-patient test metrics")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)


def plot_ablation(result, fig_path) -> None:
    """Grouped bars for the four component combinations."""
    labels = []
    for row in result.rows:
        parts = ["base"]
        if row["enable_mem"]:
            parts.append("MEM")
        if row["enable_cif"]:
            parts.append("CIF")
        labels.append("+".join(parts))
    x = range(len(result.rows))
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar([i - 0.2 for i in x], [r["dice"] for r in result.rows], width=0.4, label="Dice")
    ax.bar([i + 0.2 for i in x], [r["sens"] for r in result.rows], width=0.4, label="Sens")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels)
    ax.set_ylim(0, 1)
    ax.legend()
    ax.set_title("component ablation")
    fig.tight_layout()
    fig.savefig(fig_path, dpi=120)
    plt.close(fig)
