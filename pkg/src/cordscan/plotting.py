"""SVG plots for the classification results."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_auc_vs_threshold(results, path) -> None:
    """AUC against lesion-volume threshold, one curve per combination,
    mean +/- STD band. Single metrics are drawn as thin dashed overlays."""
    by_combo: dict[tuple, list] = {}
    for r in results:
        if r.n_splits > 0:
            by_combo.setdefault(r.combo, []).append(r)

    fig, ax = plt.subplots(figsize=(8.0, 5.0))
    colors = plt.cm.tab10.colors
    ci = 0
    for combo, rows in by_combo.items():
        rows = sorted(rows, key=lambda r: r.thr)
        thr = np.array([r.thr for r in rows])
        mean = np.array([r.auc_mean for r in rows])
        std = np.array([r.auc_std for r in rows])
        label = "+".join(m.upper() for m in combo)
        if len(combo) == 1:
            ax.plot(thr, mean, "--", linewidth=1.0, alpha=0.7, label=label)
        else:
            color = colors[ci % len(colors)]
            ci += 1
            ax.plot(thr, mean, "-", linewidth=1.8, color=color, label=label)
            ax.fill_between(thr, mean - std, mean + std, color=color, alpha=0.15)
    ax.set_xlabel("lesion volume threshold (fraction of level volume)")
    ax.set_ylabel("ROC AUC (mean +/- STD over splits)")
    ax.set_ylim(0.4, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7, ncol=2, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)
