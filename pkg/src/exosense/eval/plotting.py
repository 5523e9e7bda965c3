"""Static SVG figures for reports (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SVG_META = {"Date": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=SVG_META)
    plt.close(fig)
    return path


def fold_bars(subjects: Sequence[str], values: Sequence[float], metric: str, path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    ax.bar(range(len(values)), values, color="#4c72b0")
    ax.axhline(float(np.mean(values)), color="k", lw=1, ls="--", label=f"mean {np.mean(values):.3f}")
    ax.set_xticks(range(len(subjects)))
    ax.set_xticklabels(subjects, rotation=45)
    ax.set_ylabel(metric)
    ax.set_title(f"{metric} per held-out subject")
    ax.legend(frameon=False)
    return _save(fig, path)


def confusion_heatmap(matrix, labels: Sequence[str], path) -> Path:
    m = np.asarray(matrix, dtype=float)
    rows = m / np.maximum(m.sum(axis=1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(4, 3.6))
    im = ax.imshow(rows, vmin=0, vmax=1, cmap="Blues")
    for i in range(m.shape[0]):
        for j in range(m.shape[1]):
            ax.text(j, i, f"{int(m[i, j])}", ha="center", va="center", color="w" if rows[i, j] > 0.5 else "k")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels)
    ax.set_yticks(range(len(labels)))
    ax.set_yticklabels(labels)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax, fraction=0.046)
    return _save(fig, path)


def delay_histogram(delays_ms: Sequence[float], path, bin_ms: float = 10.0) -> Path:
    d = np.asarray(delays_ms, dtype=float)
    fig, ax = plt.subplots(figsize=(5, 3.2))
    top = max(150.0, float(d.max()) if d.size else 0.0) + bin_ms
    ax.hist(d, bins=np.arange(0, top, bin_ms), color="#dd8452", edgecolor="k")
    ax.axvline(100, color="k", ls="--", lw=1)
    ax.set_xlabel("detection delay (ms)")
    ax.set_ylabel("events")
    return _save(fig, path)
