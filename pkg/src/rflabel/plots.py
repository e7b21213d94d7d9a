"""Figure rendering for quality reports.

Figures are written straight to files (SVG by default) with the Agg
backend; nothing here opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .quality import QualityReport  # noqa: E402


def save_iou_histogram(report: QualityReport, path) -> Path:
    path = Path(path)
    edges = report.iou_histogram.get("bin_edges", [])
    counts = report.iou_histogram.get("counts", [])
    fig, ax = plt.subplots(figsize=(6, 4))
    if edges and counts:
        widths = [b - a for a, b in zip(edges[:-1], edges[1:])]
        ax.bar(edges[:-1], counts, width=widths, align="edge", color="#4878a8", edgecolor="white")
    ax.set_xlabel("IoU vs ground truth")
    ax.set_ylabel("matched labels")
    ax.set_title(f"IoU distribution (mean {report.mean_iou:.3f})")
    ax.set_xlim(0, 1)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_error_scatter(report: QualityReport, path) -> Path:
    path = Path(path)
    cols = [e["center_col_error_px"] for e in report.per_label_errors]
    heights = [e["height_error_px"] for e in report.per_label_errors]
    fig, ax = plt.subplots(figsize=(6, 4))
    if cols:
        ax.scatter(cols, heights, s=8, alpha=0.5, color="#a85448")
    ax.axhline(0, color="grey", lw=0.5)
    ax.axvline(0, color="grey", lw=0.5)
    ax.set_xlabel("center column error (px)  [angular]")
    ax.set_ylabel("box height error (px)  [depth]")
    ax.set_title("Per-label placement errors")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
