"""Closed-form heuristic baselines: Mean partition and Historical Average."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import coarsen, values_of
from .ops import EPS_FLOAT64, DistributionMap, distributional_upsample, n2_normalize, nn_upsample, sum_pool


def baseline_mean(coarse, n: int):
    """Spread each superregion's flow evenly over its ``n x n`` subregions."""
    if n < 1:
        raise ValueError(f"scaling factor must be >= 1, got {n}")
    return nn_upsample(np.asarray(values_of(coarse), np.float64), n) / float(n * n)


@dataclass(frozen=True)
class HAModel:
    fractions: DistributionMap
    fallback_blocks: int

    @property
    def n(self):
        return self.fractions.block_size

    def predict(self, coarse):
        return distributional_upsample(np.asarray(values_of(coarse), np.float64), self.fractions.values, self.n)


def fit_ha(train_fine, n: int, eps: float = EPS_FLOAT64) -> HAModel:
    """Average training allocation per superregion.

    Superregions with no training flow fall back to the uniform block.
    """
    arr = np.asarray(train_fine, np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[0] == 0:
        raise ValueError("HA needs at least one training map")
    mean_map = arr.mean(axis=0)
    fractions = n2_normalize(mean_map, n, eps)
    dead = sum_pool(mean_map, n) <= 0
    if np.any(dead):
        uniform = nn_upsample(dead.astype(np.float64), n) / float(n * n)
        fractions = np.where(nn_upsample(dead, n), uniform, fractions)
    return HAModel(DistributionMap(fractions, n, eps), int(dead.sum()))


def predict_ha(model: HAModel, coarse):
    return model.predict(coarse)
