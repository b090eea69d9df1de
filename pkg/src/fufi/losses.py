"""Training losses: Frobenius MSE, per-superregion KL and their mixture."""
from __future__ import annotations

import numpy as np
import torch

from . import kernels
from .errors import ShapeError
from .ops import nn_upsample, sum_pool

EPS_KL = 1e-8


def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ShapeError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def mse_loss(pred, truth, reduction="sum"):
    """Squared Frobenius norm of ``truth - pred``.

    For tensor batches ``reduction="batch_mean"`` averages the per-sample
    norms over the leading axis.
    """
    _same_shape(pred, truth)
    if torch.is_tensor(pred):
        sq = (truth - pred).pow(2)
        if reduction == "batch_mean":
            return sq.sum() / pred.shape[0]
        return sq.sum()
    diff = np.asarray(truth, np.float64) - np.asarray(pred, np.float64)
    return float(np.sum(diff * diff))


def ground_truth_distribution(fine_level, coarse, s):
    """``fine_level / nn_upsample(coarse, s)`` with 0 where the coarse cell is 0."""
    up = nn_upsample(coarse, s)
    if torch.is_tensor(fine_level):
        return torch.where(up > 0, fine_level / torch.where(up > 0, up, torch.ones_like(up)), torch.zeros_like(up))
    up = np.asarray(up, np.float64)
    return np.divide(np.asarray(fine_level, np.float64), up, out=np.zeros_like(up), where=up > 0)


def kl_distributional_loss(pred, truth, s, eps_kl=EPS_KL, reduction="sum"):
    """Sum over superregions of ``KL(pred_block || truth_block)``.

    Terms with a zero prediction contribute nothing; zero truth entries are
    floored at ``eps_kl``, capping their penalty. Blocks whose truth sums to
    zero are skipped. ``reduction="batch_mean"`` divides by the batch size.
    """
    _same_shape(pred, truth)
    if not torch.is_tensor(pred):
        return kernels.block_kl(np.asarray(pred).reshape((-1,) + pred.shape[-2:]),
                                np.asarray(truth).reshape((-1,) + truth.shape[-2:]), s, eps_kl)
    pos = pred > 0
    safe_pred = torch.where(pos, pred, torch.ones_like(pred))
    terms = torch.where(pos, pred * (safe_pred.log() - truth.clamp_min(eps_kl).log()), torch.zeros_like(pred))
    live = sum_pool(truth, s) > 0
    total = (sum_pool(terms, s) * live).sum()
    if reduction == "batch_mean":
        return total / pred.shape[0]
    return total


def combine_terms(mse_terms, kl_terms, alpha):
    """``sum_l alpha * KL_l + (1 - alpha) * MSE_l``."""
    if len(mse_terms) != len(kl_terms):
        raise ValueError(f"{len(mse_terms)} MSE terms but {len(kl_terms)} KL terms")
    total = 0.0
    for m, k in zip(mse_terms, kl_terms):
        total = total + alpha * k + (1.0 - alpha) * m
    return total


def combined_loss(level_outputs, truths, scales, alpha, reduction="sum"):
    """Pyramid loss over levels.

    ``level_outputs`` and ``truths`` are per-level ``(flow, distribution)``
    pairs; ``scales`` gives each level's block size.
    """
    if not (len(level_outputs) == len(truths) == len(scales)):
        raise ValueError(f"level count mismatch: {len(level_outputs)} outputs, {len(truths)} truths, {len(scales)} scales")
    mse_terms, kl_terms = [], []
    for (flow, dist), (t_flow, t_dist), s in zip(level_outputs, truths, scales):
        mse_terms.append(mse_loss(flow, t_flow, reduction))
        kl_terms.append(kl_distributional_loss(dist, t_dist, s, reduction=reduction) if alpha > 0 else 0.0)
    return combine_terms(mse_terms, kl_terms, alpha)
