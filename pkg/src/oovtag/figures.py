"""Matplotlib renderings of evaluation reports and training histories."""

from __future__ import annotations

from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from oovtag.evaluation import EvalReport


def save_slot_f1_figure(report: EvalReport, path: str) -> None:
    """Bar chart of per-slot F1 with the overall score as a reference line."""
    slots = sorted(report.per_slot)
    scores = [report.per_slot[s].f1 for s in slots]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.9 * len(slots) + 1.5), 3.5))
    ax.bar(range(len(slots)), scores, color="#4878a8")
    ax.axhline(report.overall.f1, color="#b04030", linestyle="--", linewidth=1,
               label=f"overall {report.overall.f1:.3f}")
    ax.set_xticks(range(len(slots)))
    ax.set_xticklabels(slots, rotation=30, ha="right")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("span F1")
    ax.set_title("Per-slot F1")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curves(history: Sequence[dict], path: str) -> None:
    """Loss components and dev F1 over epochs, two stacked panels."""
    epochs = [rec["epoch"] for rec in history]
    fig, (ax_loss, ax_f1) = plt.subplots(2, 1, figsize=(6, 5), sharex=True)
    for key, label in (
        ("loss_total", "total"), ("loss_ce", "tagging NLL"),
        ("loss_scl", "supervised contrastive"), ("loss_nce", "InfoNCE"),
    ):
        ax_loss.plot(epochs, [rec[key] for rec in history], label=label)
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=8)
    ax_f1.plot(epochs, [rec["dev_f1"] for rec in history], color="#386838")
    ax_f1.set_ylim(0.0, 1.05)
    ax_f1.set_xlabel("epoch")
    ax_f1.set_ylabel("dev F1")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
