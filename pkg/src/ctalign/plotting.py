"""Figure rendering for the CLI report paths.

All functions write PNG files next to the delimited outputs; the Agg backend
keeps them usable in headless runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .labeler import ENTITIES


def save_loss_curves(trace, path) -> None:
    """Per-epoch contrastive/distillation/total curves from a training run."""
    epochs = [e.epoch for e in trace]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(epochs, [e.contrastive for e in trace], label="contrastive")
    if any(e.distill > 0 for e in trace):
        ax.plot(epochs, [e.distill for e in trace], label="distillation")
    ax.plot(epochs, [e.total for e in trace], label="total", linestyle="--")
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_prf1_bars(rows, path) -> None:
    """Grouped precision/recall/F1 bars per entity plus the macro average."""
    names = list(ENTITIES) + ["macro"]
    width = 0.27
    xs = range(len(names))
    fig, ax = plt.subplots(figsize=(9, 4.5))
    ax.bar([x - width for x in xs], [rows[n].precision for n in names], width, label="precision")
    ax.bar(list(xs), [rows[n].recall for n in names], width, label="recall")
    ax.bar([x + width for x in xs], [rows[n].f1 for n in names], width, label="F1")
    ax.set_xticks(list(xs))
    ax.set_xticklabels([n.replace("_", " ") for n in names], rotation=20, ha="right")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_nlp_bars(scores, path) -> None:
    """Bar chart of the four generation metrics (CIDEr on its own axis)."""
    fig, (ax1, ax2) = plt.subplots(
        1, 2, figsize=(7, 4), gridspec_kw={"width_ratios": [3, 1]}
    )
    unit_metrics = [("BLEU-4", scores.bleu4), ("ROUGE-L", scores.rouge_l), ("METEOR", scores.meteor)]
    ax1.bar([m for m, _ in unit_metrics], [v for _, v in unit_metrics])
    ax1.set_ylim(0, 1.05)
    ax1.grid(True, axis="y", alpha=0.3)
    ax2.bar(["CIDEr-D"], [scores.cider], color="tab:orange")
    ax2.set_ylim(0, 10.5)
    ax2.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_bars(rows, path) -> None:
    """Per-seed grouped recall@1 for robust vs plain contrastive training."""
    seeds = [str(r.seed) for r in rows]
    width = 0.38
    xs = range(len(rows))
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar([x - width / 2 for x in xs], [r.recall_roco for r in rows], width, label="robust")
    ax.bar([x + width / 2 for x in xs], [r.recall_infonce for r in rows], width, label="plain")
    ax.set_xticks(list(xs))
    ax.set_xticklabels(seeds)
    ax.set_xlabel("seed")
    ax.set_ylabel("grouped recall@1")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
