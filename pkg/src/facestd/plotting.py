"""File-only figures for CLI reports.

Figures are built with :class:`matplotlib.figure.Figure` and the Agg
canvas directly, so nothing here touches pyplot state or needs a display.
"""

from __future__ import annotations

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .volume import PLANES


def _save(fig, path):
    FigureCanvasAgg(fig)
    fig.savefig(path, dpi=100)
    return path


def _show(ax, image, title, **kwargs):
    # rows of a slice array are its first axis; draw them top to bottom
    ax.imshow(np.asarray(image).T, origin="lower", cmap=kwargs.pop("cmap", "gray"), **kwargs)
    ax.set_title(title, fontsize=9)
    ax.set_xticks([])
    ax.set_yticks([])


def plot_slices(slices, path, title=None):
    """Sagittal, coronal and axial center slices side by side."""
    fig = Figure(figsize=(9, 3.2))
    for k, (plane, image) in enumerate(slices.as_dict().items()):
        _show(fig.add_subplot(1, 3, k + 1), image, f"{plane} [{slices.indices[k]}]")
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def plot_comparison(est_slices, gt_slices, path, title=None):
    """Estimated, ground-truth and absolute-difference rows for each plane."""
    fig = Figure(figsize=(9, 9))
    for k, plane in enumerate(PLANES):
        est = np.asarray(est_slices[k])
        gt = np.asarray(gt_slices[k])
        lo = min(est.min(), gt.min())
        hi = max(est.max(), gt.max())
        _show(fig.add_subplot(3, 3, 3 * k + 1), est, f"{plane} estimate", vmin=lo, vmax=hi)
        _show(fig.add_subplot(3, 3, 3 * k + 2), gt, f"{plane} ground truth", vmin=lo, vmax=hi)
        _show(fig.add_subplot(3, 3, 3 * k + 3), np.abs(est - gt), f"{plane} |difference|", cmap="magma", vmin=0.0, vmax=max(hi - lo, 1e-12))
    if title:
        fig.suptitle(title, fontsize=10)
    fig.tight_layout()
    return _save(fig, path)


def plot_convergence(history, path):
    """SO3 and translation error per refinement iteration, when recorded."""
    iters = [h["iteration"] for h in history if "so3_deg" in h]
    fig = Figure(figsize=(6, 3.2))
    ax = fig.add_subplot(1, 1, 1)
    if iters:
        ax.plot(iters, [h["so3_deg"] for h in history if "so3_deg" in h], "o-", label="SO3 error (deg)")
        ax2 = ax.twinx()
        ax2.plot(iters, [h["trans_norm"] for h in history if "so3_deg" in h], "s--", color="tab:orange")
        ax2.set_ylabel("translation error (normalized)")
        ax.set_ylabel("SO3 error (deg)")
    else:
        losses = [(h["iteration"], h["loss"]) for h in history if "loss" in h]
        if losses:
            ax.plot(*zip(*losses), "o-")
        ax.set_ylabel("estimator loss")
    ax.set_xlabel("iteration")
    fig.tight_layout()
    return _save(fig, path)


def plot_batch_summary(rows, path, keys=("so3_deg", "ea_mean_deg", "trans_mm_total")):
    """Box plots over the cases of a batch evaluation, one panel per metric."""
    fig = Figure(figsize=(3.0 * len(keys), 3.4))
    for k, key in enumerate(keys):
        ax = fig.add_subplot(1, len(keys), k + 1)
        values = [row[key] for row in rows if np.isfinite(row[key])]
        if values:
            ax.boxplot(values)
        ax.set_title(key, fontsize=9)
        ax.set_xticks([])
    fig.tight_layout()
    return _save(fig, path)
