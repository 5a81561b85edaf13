"""Figures written to files: colourised label maps, comparisons, sweep heatmaps.

Only the Agg canvas is used, so nothing here needs a display.  Colours are a
pure function of the label id, which keeps label PNGs byte-identical across
runs.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.colors import hsv_to_rgb
from matplotlib.figure import Figure
from matplotlib.image import imsave

_GOLDEN = 0.6180339887498949
_METADATA = {"Software": None}


def label_colors(labels) -> np.ndarray:
    """RGB image for a label grid; label 0 is black.

    Hues step by the golden ratio so that consecutive ids get distant colours;
    saturation and value cycle with period 3 to separate near-equal hues.
    """
    lab = np.asarray(labels, dtype=np.int64)
    ids = lab.astype(np.float64)
    hsv = np.empty(lab.shape + (3,))
    hsv[..., 0] = np.mod(ids * _GOLDEN, 1.0)
    hsv[..., 1] = 0.55 + 0.15 * np.mod(lab, 3)
    hsv[..., 2] = 0.95 - 0.1 * np.mod(lab // 3, 3)
    rgb = hsv_to_rgb(hsv)
    rgb[lab == 0] = 0.0
    return rgb


def save_label_png(labels, path) -> None:
    imsave(str(path), label_colors(labels), metadata=_METADATA)


def _new_figure(width, height):
    fig = Figure(figsize=(width, height), dpi=100)
    FigureCanvasAgg(fig)
    return fig


def plot_comparison(gt_labels, ms_labels, path, title: str = "",
                    ranges: Optional[np.ndarray] = None) -> None:
    """Side-by-side GT and MS label maps, optionally with the range image."""
    panels = [("ground truth", label_colors(gt_labels)), ("extracted", label_colors(ms_labels))]
    if ranges is not None:
        panels.insert(0, ("range [m]", np.asarray(ranges)))
    fig = _new_figure(4 * len(panels), 4)
    for i, (name, img) in enumerate(panels):
        ax = fig.add_subplot(1, len(panels), i + 1)
        if img.ndim == 2:
            im = ax.imshow(img, cmap="viridis", interpolation="nearest")
            fig.colorbar(im, ax=ax, fraction=0.046)
        else:
            ax.imshow(img, interpolation="nearest")
        ax.set_title(name)
        ax.set_xticks([])
        ax.set_yticks([])
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(str(path), metadata=_METADATA)


def plot_increments(increments: Sequence[float], path, threshold: Optional[float] = None) -> None:
    """Error increment of every applied clustering step (log scale)."""
    inc = np.asarray(increments, dtype=np.float64)
    fig = _new_figure(6, 3.5)
    ax = fig.add_subplot(1, 1, 1)
    steps = np.arange(1, inc.size + 1)
    pos = inc > 0
    ax.semilogy(steps[pos], inc[pos], ".", ms=2)
    if threshold is not None and threshold > 0:
        ax.axhline(threshold, color="k", lw=0.8, ls="--", label="threshold")
        ax.legend(loc="upper left")
    ax.set_xlabel("step")
    ax.set_ylabel("error increment [m$^2$]")
    fig.tight_layout()
    fig.savefig(str(path), metadata=_METADATA)


def plot_sweep(names: Sequence[str], rows: Sequence[dict], path, metric: str = "f") -> None:
    """Mean metric over the grid: a heatmap for two parameters, a line for one.

    With more than two parameters the first two are shown and the rest are
    maximised over.
    """
    fig = _new_figure(5.5, 4.5)
    ax = fig.add_subplot(1, 1, 1)
    if len(names) == 1:
        x = np.array([r[names[0]] for r in rows])
        y = np.array([r[metric] for r in rows])
        o = np.argsort(x, kind="stable")
        ax.plot(x[o], y[o], "o-")
        ax.set_xlabel(names[0])
        ax.set_ylabel(f"mean {metric}")
    else:
        a, b = names[0], names[1]
        xs = sorted({r[a] for r in rows})
        ys = sorted({r[b] for r in rows})
        Z = np.full((len(ys), len(xs)), np.nan)
        for r in rows:
            i, j = ys.index(r[b]), xs.index(r[a])
            Z[i, j] = np.fmax(Z[i, j], r[metric])
        im = ax.imshow(Z, origin="lower", aspect="auto", interpolation="nearest", cmap="magma")
        ax.set_xticks(range(len(xs)), [f"{v:.3g}" for v in xs], rotation=45)
        ax.set_yticks(range(len(ys)), [f"{v:.3g}" for v in ys])
        ax.set_xlabel(a)
        ax.set_ylabel(b)
        fig.colorbar(im, ax=ax, label=f"mean {metric}")
    fig.tight_layout()
    fig.savefig(str(path), metadata=_METADATA)
