"""Report figures, rendered off-screen to PNG next to the delimited reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .ablation import AblationReport  # noqa: E402
from .evaluation import CeilingResult, Confusion  # noqa: E402
from .model import Instrument, Lane  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "svg.hashsalt": "chartbench",
}


def _save(fig, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    # no timestamps/software tags, so reruns give identical files
    fig.savefig(path, metadata={"Software": None}, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_offset_histogram(result: CeilingResult, path: Path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.8))
        ax.bar(result.bin_centers * 1000, result.counts, width=9, color="0.35")
        for x in (-result.tolerance, result.tolerance):
            ax.axvline(x * 1000, ls="--", lw=0.8, color="k")
        ax.set_xlabel("nearest onset - ground truth (ms)")
        ax.set_ylabel("events")
        ax.set_title(f"{result.fraction_within:.1%} within +/-{result.tolerance * 1000:.0f} ms (n={result.n_events})")
        return _save(fig, path)


def plot_f1_by_instrument(aggregate: Mapping[Instrument, Mapping[str, float]], path: Path) -> Path:
    insts = list(aggregate)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.8, 2.8))
        x = np.arange(len(insts))
        f1 = [aggregate[i]["f1"] for i in insts]
        ax.bar(x, f1, color="0.35")
        for xi, v in zip(x, f1):
            ax.text(xi, v + 0.01, f"{v:.3f}", ha="center", va="bottom", fontsize=7)
        ax.set_xticks(x, [i.value for i in insts])
        ax.set_ylim(0, 1.08)
        ax.set_ylabel("onset F1")
        return _save(fig, path)


def plot_confusion(confusion: Confusion, path: Path, drums: bool = True) -> Path:
    names = [Lane(l).name.lower() for l in confusion.labels] if drums else [str(l) for l in confusion.labels]
    norm = confusion.row_normalized()
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(3.6, 3.2))
        im = ax.imshow(norm, vmin=0, vmax=1, cmap="Greys")
        for i in range(norm.shape[0]):
            for j in range(norm.shape[1]):
                ax.text(j, i, f"{norm[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="white" if norm[i, j] > 0.5 else "black")
        ax.set_xticks(range(len(names)), names, rotation=45)
        ax.set_yticks(range(len(names)), names)
        ax.set_xlabel("predicted lane")
        ax.set_ylabel("ground-truth lane")
        fig.colorbar(im, ax=ax, fraction=0.046)
        return _save(fig, path)


def plot_ablation(reports: Sequence[AblationReport], path: Path) -> Path:
    reports = sorted(reports, key=lambda r: r.mean_delta_f1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 0.5 + 0.35 * max(len(reports), 1)))
        y = np.arange(len(reports))
        ax.barh(y, [r.mean_delta_f1 for r in reports], color=["0.2" if r.significant else "0.6" for r in reports])
        ax.axvline(0, color="k", lw=0.8)
        ax.set_yticks(y, [r.component + (" *" if r.significant else "") for r in reports])
        ax.set_xlabel("mean per-song delta F1 (ablated - full)")
        return _save(fig, path)
