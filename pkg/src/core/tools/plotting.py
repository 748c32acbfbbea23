"""
plotting.py
SVG figures for reports: precision/recall curves, optimisation traces and
binned recall with ground-truth histograms. Headless (Agg backend).
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import matplotlib
import orjson

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path: Path, provenance: Optional[Dict[str, Any]] = None) -> Path:
    """Write an SVG; provenance goes into the document's description metadata as JSON."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    metadata = {"Description": orjson.dumps(provenance).decode()} if provenance else None
    fig.savefig(str(path), format="svg", metadata=metadata)
    plt.close(fig)
    return path


def plot_pr_curves(
    curves: Dict[str, tuple], path: Path, title: str = "", provenance: Optional[Dict[str, Any]] = None
) -> Path:
    """curves: label -> (recall, precision)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for label, (recall, precision) in curves.items():
        ax.plot(recall, precision, label=label)
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    if title:
        ax.set_title(title)
    if curves:
        ax.legend(fontsize="small")
    return _save(fig, path, provenance)


def plot_loss_traces(
    losses: Sequence[np.ndarray],
    magnitudes: Optional[Dict[str, np.ndarray]],
    path: Path,
    warmup_steps: int = 0,
    provenance: Optional[Dict[str, Any]] = None,
) -> Path:
    """One loss polyline per trace; optional averaged gradient magnitudes per component."""
    ncols = 2 if magnitudes else 1
    fig, axes = plt.subplots(1, ncols, figsize=(5 * ncols, 4), squeeze=False)
    ax = axes[0, 0]
    for trace in losses:
        ax.plot(np.arange(len(trace)), trace, linewidth=0.8, alpha=0.6)
    if warmup_steps:
        ax.axvline(warmup_steps, color="grey", linestyle="--", linewidth=0.8)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("corner loss [m]")
    if magnitudes:
        ax = axes[0, 1]
        for name, series in magnitudes.items():
            ax.plot(np.arange(len(series)), series, label=name)
        ax.set_yscale("log")
        ax.set_xlabel("iteration")
        ax.set_ylabel("mean gradient magnitude")
        ax.legend(fontsize="small")
    return _save(fig, path, provenance)


def plot_binned_recall(
    edges: np.ndarray,
    recall: np.ndarray,
    counts: np.ndarray,
    path: Path,
    xlabel: str,
    provenance: Optional[Dict[str, Any]] = None,
) -> Path:
    """Recall per bin over a ground-truth count histogram."""
    centers = (edges[:-1] + edges[1:]) / 2.0
    widths = np.diff(edges)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(centers, counts, width=widths * 0.9, color="lightgrey", label="ground truth")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("ground truth count")
    twin = ax.twinx()
    twin.plot(centers, np.nan_to_num(recall, nan=0.0), marker="o", color="tab:blue", label="recall")
    twin.set_ylim(0, 1.02)
    twin.set_ylabel("recall")
    return _save(fig, path, provenance)
