"""Static absolute-error heatmaps."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def error_heatmap(pred, truth, out_path, title=None, vmax=None, cmap="viridis"):
    """Write ``|pred - truth|`` for one 2-D map to ``out_path``; returns the error grid."""
    pred, truth = np.asarray(pred, np.float64), np.asarray(truth, np.float64)
    if pred.shape != truth.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match truth {truth.shape}")
    if pred.ndim != 2:
        raise ValueError(f"expected a single 2-D map, got shape {pred.shape}")
    err = np.abs(pred - truth)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(err, cmap=cmap, vmin=0.0, vmax=vmax, interpolation="nearest")
    ax.set_xticks([])
    ax.set_yticks([])
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return err
