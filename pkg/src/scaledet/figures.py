"""Matplotlib renderings of the report CSVs, written next to them.

All figures use the Agg backend with fixed sizes so repeated runs produce
identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np  # noqa: E402

from .evaluation import BinResult, ScaleBin  # noqa: E402
from .harness import CompareRow, CompareSummary, GradcheckReport  # noqa: E402

_DPI = 120


def save_compare_figure(rows: Sequence[CompareRow], summaries: Sequence[CompareSummary],
                        path: str | Path) -> None:
    """Per-pattern score scatter plus grouped mean bars for the pooling study."""
    fig, (ax_scatter, ax_bars) = plt.subplots(1, 2, figsize=(11, 4.5), dpi=_DPI)

    colors = {"small": "tab:red", "large": "tab:blue"}
    for size_class in ("small", "large"):
        group = [r for r in rows if r.size_class == size_class]
        if not group:
            continue
        ax_scatter.scatter(
            [r.score_roi for r in group],
            [r.score_caroi for r in group],
            s=14,
            alpha=0.6,
            color=colors[size_class],
            label=f"{size_class} (n={len(group)})",
        )
    ax_scatter.plot([-1, 1], [-1, 1], color="gray", lw=0.8, ls="--")
    ax_scatter.set_xlabel("structure score, plain RoI pooling")
    ax_scatter.set_ylabel("structure score, context-aware pooling")
    ax_scatter.set_title("Per-pattern structure preservation")
    ax_scatter.set_xlim(-1.05, 1.05)
    ax_scatter.set_ylim(-1.05, 1.05)
    ax_scatter.legend(loc="lower right", fontsize=8)

    if summaries:
        idx = np.arange(len(summaries))
        width = 0.38
        ax_bars.bar(idx - width / 2, [s.mean_score_roi for s in summaries], width,
                    label="plain RoI", color="tab:orange")
        ax_bars.bar(idx + width / 2, [s.mean_score_caroi for s in summaries], width,
                    label="context-aware", color="tab:green")
        ax_bars.set_xticks(idx)
        ax_bars.set_xticklabels([f"{s.size_class}\n(n={s.n})" for s in summaries])
        ax_bars.set_ylabel("mean structure score")
        ax_bars.set_title("Mean by size class")
        ax_bars.legend(fontsize=8)
        ax_bars.set_ylim(0, 1.05)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_gradcheck_figure(report: GradcheckReport, path: str | Path) -> None:
    """Max relative error per pooling case on a log axis, with the tolerance line."""
    fig, ax = plt.subplots(figsize=(6.5, 4), dpi=_DPI)
    labels = [row.case.value for row in report.rows]
    # Zero errors happen (pure max-pool paths are exact); floor them for the log axis.
    errs = [max(row.max_rel_err, 1e-18) for row in report.rows]
    bars = ax.bar(labels, errs, color=["tab:green" if row.max_rel_err <= report.tolerance
                                       else "tab:red" for row in report.rows])
    ax.axhline(report.tolerance, color="black", ls="--", lw=1,
               label=f"tolerance {report.tolerance:g}")
    ax.set_yscale("log")
    ax.set_ylabel("max relative error")
    ax.set_title("Gradient check by pooling case")
    ax.legend(fontsize=8)
    for bar, row in zip(bars, report.rows):
        ax.annotate(f"{row.max_rel_err:.2e}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                    ha="center", va="bottom", fontsize=7)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def save_eval_figure(results: Sequence[BinResult], path: str | Path) -> None:
    """Grouped AP bars, one group per class, one bar per scale bin."""
    classes = sorted({r.class_id for r in results})
    bins = (ScaleBin.SMALL, ScaleBin.MEDIUM, ScaleBin.LARGE)
    fig, ax = plt.subplots(figsize=(max(6.0, 2.2 * len(classes)), 4), dpi=_DPI)
    width = 0.26
    idx = np.arange(len(classes))
    for b, bin_ in enumerate(bins):
        aps = []
        for cls in classes:
            match = [r.ap for r in results if r.class_id == cls and r.bin is bin_]
            aps.append(match[0] if match else 0.0)
        ax.bar(idx + (b - 1) * width, aps, width, label=bin_.value)
    ax.set_xticks(idx)
    ax.set_xticklabels(classes)
    ax.set_ylabel("average precision")
    ax.set_ylim(0, 1.05)
    ax.set_title("AP by class and scale bin")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
