"""Figures written to files with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Dict, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "figure.dpi": 120,
    "savefig.bbox": "tight",
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_roc(curves: Dict[str, tuple], path) -> Path:
    """``curves`` maps a label to ``(RocCurve, auc)``."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 4))
        for label, (curve, auc) in curves.items():
            ax.plot(curve.fpr, curve.tpr, label=f"{label} (AUC {auc:.3f})")
        ax.plot([0, 1], [0, 1], color="0.6", lw=0.8, ls="--")
        ax.set(xlabel="false positive rate", ylabel="true positive rate", xlim=(0, 1), ylim=(0, 1.01))
        ax.legend(loc="lower right", fontsize=8)
        return _save(fig, path)


def plot_training(log, path) -> Path:
    """Loss components and validation metrics per epoch; phase switch marked."""
    epochs = log.column("epoch")
    with plt.rc_context(STYLE):
        fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
        for name in ("loss_a", "loss_f", "loss_c"):
            vals = log.column(name)
            if np.any(np.isfinite(vals)):
                ax1.plot(epochs, vals, marker="o", ms=3, label=name)
        ax1.set(xlabel="epoch", ylabel="training loss", yscale="log")
        for name in ("val_accuracy", "val_auc", "val_attention_cc"):
            vals = log.column(name)
            if np.any(np.isfinite(vals)):
                ax2.plot(epochs, vals, marker="o", ms=3, label=name)
        ax2.set(xlabel="epoch", ylabel="validation", ylim=(0, 1.02))
        phases = log.column("phase")
        switch = np.flatnonzero(np.diff(phases) > 0)
        for ax in (ax1, ax2):
            for k in switch:
                ax.axvline(epochs[k] + 0.5, color="0.5", lw=0.8, ls=":")
            ax.legend(fontsize=8)
        return _save(fig, path)


def plot_proportion_curves(thresholds, curves: Dict[str, np.ndarray], path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.2))
        for label, vals in curves.items():
            ax.plot(thresholds, vals, label=label)
        ax.set(xlabel="threshold", ylabel="proportion of pixels above", xlim=(0, 1), ylim=(0, 1))
        ax.legend(fontsize=8)
        return _save(fig, path)


def plot_panels(images: np.ndarray, rows: Dict[str, np.ndarray], path, titles: Sequence[str] = ()) -> Path:
    """One column per image: the input on top, then each map row below it."""
    n = len(images)
    k = 1 + len(rows)
    with plt.rc_context({**STYLE, "axes.grid": False}):
        fig, axes = plt.subplots(k, n, figsize=(1.6 * n, 1.6 * k), squeeze=False)
        for j in range(n):
            axes[0, j].imshow(np.clip(images[j].transpose(1, 2, 0), 0, 1))
            if j < len(titles):
                axes[0, j].set_title(titles[j], fontsize=7)
            for i, (name, maps) in enumerate(rows.items(), start=1):
                axes[i, j].imshow(maps[j], cmap="magma", vmin=0, vmax=1)
                if j == 0:
                    axes[i, j].set_ylabel(name, fontsize=8)
        for ax in axes.ravel():
            ax.set_xticks([])
            ax.set_yticks([])
        return _save(fig, path)


def plot_ablation(rows, path) -> Path:
    """Bar chart of test accuracy and AUC per configuration."""
    names = [r["ablation"] for r in rows]
    x = np.arange(len(names))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(1.3 * len(names) + 1.5, 3.2))
        ax.bar(x - 0.18, [r["accuracy"] for r in rows], 0.36, label="accuracy")
        ax.bar(x + 0.18, [r["auc"] for r in rows], 0.36, label="AUC")
        ax.set_xticks(x, names, rotation=20, ha="right")
        ax.set(ylim=(0, 1.05), ylabel="test")
        ax.legend(fontsize=8)
        return _save(fig, path)
