"""Delimited tables and matplotlib figures for command outputs."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path
from typing import Sequence

import matplotlib as mpl

mpl.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["write_table", "read_table", "plot_ablation", "plot_bench", "plot_segmentation", "format_table"]

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "hpgseg",
}


def _fmt(v):
    return repr(v) if isinstance(v, float) else str(v)


def write_table(rows: Sequence[dict], columns: Sequence[str], dest) -> None:
    """CSV with a header row; ``dest`` is a path or an open text stream."""
    if hasattr(dest, "write"):
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(columns)
        w.writerows([_fmt(r[c]) for c in columns] for r in rows)
        return
    with Path(dest).open("w", newline="") as fh:
        write_table(rows, columns, fh)


def read_table(path) -> list[dict]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))


def format_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    """Fixed-width text rendering for the terminal."""
    cells = [[c for c in columns]] + [
        [f"{r[c]:.4g}" if isinstance(r[c], float) else str(r[c]) for c in columns] for r in rows
    ]
    widths = [max(len(row[k]) for row in cells) for k in range(len(columns))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(row, widths)) for row in cells)


def _new(width=6.0, ratio=0.62):
    fig, ax = plt.subplots(figsize=(width, width * ratio))
    return fig, ax


def plot_ablation(rows: Sequence[dict], path) -> None:
    """Grouped bars of AP / AP50 / AP25 per radius set, one panel per noise setting."""
    by_noise = defaultdict(list)
    for r in rows:
        by_noise[(r["offset_sigma"], r["semantic_flip_rate"], r["mask_flip_rate"])].append(r)
    with mpl.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(by_noise), figsize=(5.0 * max(1, len(by_noise)), 3.2),
                                 squeeze=False)
        for ax, (noise, group) in zip(axes[0], sorted(by_noise.items())):
            x = np.arange(len(group))
            for k, metric in enumerate(("ap", "ap50", "ap25")):
                ax.bar(x + (k - 1) * 0.27, [float(r[metric]) for r in group], 0.27, label=metric.upper())
            ax.set_xticks(x)
            ax.set_xticklabels(["{" + r["radii"].replace(";", ", ") + "}" for r in group],
                               rotation=30, ha="right")
            ax.set_ylim(0, 1.05)
            ax.set_title(f"offset sigma {noise[0]:g}, label flip {noise[1]:g}")
            ax.set_ylabel("score")
        axes[0][0].legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def plot_bench(rows: Sequence[dict], path) -> None:
    """Mean stage times against point count."""
    with mpl.rc_context(STYLE):
        fig, ax = _new()
        sizes = sorted({int(r["n_points"]) for r in rows})
        for stage in ("group_ms", "mask_ms", "nms_ms", "total_ms"):
            means = [np.mean([float(r[stage]) for r in rows if int(r["n_points"]) == n]) for n in sizes]
            ax.plot(sizes, means, marker="o", label=stage[:-3])
        ax.set_xlabel("points")
        ax.set_ylabel("wall time (ms)")
        if sizes:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)


def plot_segmentation(positions: np.ndarray, preds, path) -> None:
    """Top-down scatter; points colored by predicted instance, unassigned in grey."""
    from .inference import point_assignment

    assign = point_assignment(preds, positions.shape[0])
    with mpl.rc_context(STYLE):
        fig, ax = _new(5.0, 1.0)
        bg = assign < 0
        ax.scatter(positions[bg, 0], positions[bg, 1], s=0.5, c="0.8", linewidths=0)
        cmap = plt.get_cmap("tab20")
        ax.scatter(positions[~bg, 0], positions[~bg, 1], s=0.5, c=cmap(assign[~bg] % 20), linewidths=0)
        ax.set_aspect("equal")
        ax.set_xlabel("x (m)")
        ax.set_ylabel("y (m)")
        ax.set_title(f"{len(preds)} instances")
        fig.tight_layout()
        fig.savefig(path, metadata={"Software": None})
        plt.close(fig)
