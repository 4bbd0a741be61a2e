"""PNG figures written next to the CSV reports."""

from __future__ import annotations

from typing import Dict, List, Sequence

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _save(fig, path) -> None:
    fig.tight_layout()
    # fixed metadata keeps reruns byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)


def plot_training(history: Sequence, path, title: str = "") -> None:
    """Loss components and validation accuracy per epoch."""
    epochs = [e.epoch for e in history]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    for key in ("loss_total", "loss_ce", "loss_logit", "loss_attn"):
        vals = [getattr(e, key) for e in history]
        if any(v != 0 for v in vals):
            ax1.plot(epochs, vals, label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend(fontsize=8)
    ax2.plot(epochs, [e.val_acc for e in history], label="val acc")
    ax2.plot(epochs, [e.val_f1 for e in history], label="val F1")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0, 1)
    ax2.legend(fontsize=8)
    if title:
        fig.suptitle(title)
    _save(fig, path)


def plot_sweep(rows: List[Dict], path) -> None:
    taus = [r["tau"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for key, label in (("test_acc", "accuracy"), ("f1", "F1"), ("auc", "AUC"), ("map", "mAP")):
        ax.plot(taus, [r[key] for r in rows], marker="o", label=label)
    ax.set_xlabel("temperature")
    ax.set_ylabel("test metric")
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_modes(rows: List[Dict], path) -> None:
    names = [r["mode"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    bars = ax.bar(names, [r["acc"] for r in rows], color="tab:green")
    for b, r in zip(bars, rows):
        ax.annotate(f"{r['acc']:.3f}", (b.get_x() + b.get_width() / 2, b.get_height()), ha="center", va="bottom",
                    fontsize=8)
    lo = min(r["acc"] for r in rows)
    ax.set_ylim(max(0.0, lo - 0.1), 1.0)
    ax.set_ylabel("mean test accuracy")
    _save(fig, path)


def plot_latency(rows: List[Dict], path) -> None:
    names = [r["model"] for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(names, [r["lat_ms_mean"] for r in rows], yerr=[r["lat_ms_std"] for r in rows], capsize=4)
    ax.set_ylabel("latency per image (ms)")
    _save(fig, path)


def plot_confusion(confusion, class_names: Sequence[str], path) -> None:
    cm = np.asarray(confusion)
    fig, ax = plt.subplots(figsize=(5, 4.5))
    ax.imshow(cm, cmap="Greens")
    for i in range(cm.shape[0]):
        for j in range(cm.shape[1]):
            ax.text(j, i, str(cm[i, j]), ha="center", va="center", fontsize=7)
    ticks = range(len(class_names))
    ax.set_xticks(ticks, class_names, rotation=60, ha="right", fontsize=7)
    ax.set_yticks(ticks, class_names, fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    _save(fig, path)


def plot_quant(row: Dict, path) -> None:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(7, 3.2))
    ax1.bar(["float", "int8"], [row["float_acc"], row["int8_acc"]], color=["tab:blue", "tab:orange"])
    ax1.set_ylim(0, 1)
    ax1.set_ylabel("test accuracy")
    ax2.bar(["float", "int8"], [row["float_bytes"] / 1e3, row["int8_bytes"] / 1e3], color=["tab:blue", "tab:orange"])
    ax2.set_ylabel("checkpoint size (kB)")
    _save(fig, path)
