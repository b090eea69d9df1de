"""Structural-constraint operators.

Every operator accepts either a NumPy array or a torch tensor whose last two
axes are spatial. Tensor inputs stay on the autograd graph; NumPy inputs are
computed in float64 by the block kernels in :mod:`fufi.kernels`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from . import kernels
from .errors import ShapeError
from .grid import values_of

EPS_FLOAT64 = 1e-9
EPS_FLOAT32 = 1e-7


def _check_divisible(shape, s):
    if s < 1:
        raise ValueError(f"block size must be >= 1, got {s}")
    for size, name in zip(shape[-2:], ("height", "width")):
        if size % s:
            raise ShapeError(f"{name} {size} is not divisible by block size {s}")


def _stacked(fn, arr, *args):
    lead = arr.shape[:-2]
    out = fn(arr.reshape((-1,) + arr.shape[-2:]), *args)
    return out.reshape(lead + out.shape[-2:])


def sum_pool(x, s: int):
    """Sum over non-overlapping ``s x s`` blocks of the last two axes."""
    s = int(s)
    if torch.is_tensor(x):
        _check_divisible(x.shape, s)
        *lead, h, w = x.shape
        return x.reshape(*lead, h // s, s, w // s, s).sum(dim=(-3, -1))
    arr = values_of(x)
    _check_divisible(arr.shape, s)
    return _stacked(kernels.block_sum, arr, s)


def nn_upsample(x, s: int):
    """Replicate every cell into an ``s x s`` block."""
    s = int(s)
    if s < 1:
        raise ValueError(f"upsampling factor must be >= 1, got {s}")
    if torch.is_tensor(x):
        return x.repeat_interleave(s, dim=-2).repeat_interleave(s, dim=-1)
    arr = values_of(x)
    return np.repeat(np.repeat(arr, s, axis=-2), s, axis=-1)


def n2_normalize(x, s: int, eps: float | None = None):
    """Divide each cell by its ``s x s`` block sum plus ``eps``.

    ``eps`` defaults to 1e-9 for float64 inputs and 1e-7 otherwise. Block sums
    of the result are ``sum / (sum + eps)``, so they fall short of 1 by
    ``O(eps / sum)``; all-zero blocks stay zero.
    """
    s = int(s)
    if torch.is_tensor(x):
        if eps is None:
            eps = EPS_FLOAT64 if x.dtype == torch.float64 else EPS_FLOAT32
        _check_divisible(x.shape, s)
        if bool((x.detach() < 0).any()):
            raise ValueError("n2_normalize requires non-negative input")
        return x / (nn_upsample(sum_pool(x, s), s) + eps)
    arr = values_of(x)
    if eps is None:
        eps = EPS_FLOAT64 if arr.dtype == np.float64 else EPS_FLOAT32
    _check_divisible(arr.shape, s)
    if np.any(arr < 0):
        raise ValueError("n2_normalize requires non-negative input")
    return _stacked(kernels.block_normalize, arr, s, eps)


def distributional_upsample(coarse, dist, s: int | None = None):
    """Fine flows as replicated coarse flows times a distribution map."""
    if isinstance(dist, DistributionMap):
        s, dist = dist.block_size, dist.values
    c = coarse if torch.is_tensor(coarse) else values_of(coarse)
    if s is None:
        s = dist.shape[-1] // c.shape[-1]
    if tuple(dist.shape[-2:]) != (c.shape[-2] * s, c.shape[-1] * s):
        raise ShapeError(f"distribution {tuple(dist.shape)} does not match coarse {tuple(c.shape)} x {s}")
    return nn_upsample(c, s) * dist


def structural_loss(coarse, fine_pred, n: int):
    """Sum over superregions of ``|coarse - block_sum(fine_pred)|``.

    For stacks the residuals of every map are summed.
    """
    c = coarse if torch.is_tensor(coarse) else values_of(coarse)
    if tuple(fine_pred.shape[-2:]) != (c.shape[-2] * n, c.shape[-1] * n):
        raise ShapeError(f"prediction {tuple(fine_pred.shape)} does not match coarse {tuple(c.shape)} x {n}")
    resid = c - sum_pool(fine_pred, n)
    if torch.is_tensor(resid):
        return resid.abs().sum()
    return float(np.abs(resid).sum())


def block_sums(values, s: int) -> np.ndarray:
    v = values.detach().cpu().double().numpy() if torch.is_tensor(values) else np.asarray(values, np.float64)
    return sum_pool(v, s)


def distribution_violation(values, s: int) -> float:
    """Largest deviation of any non-zero block sum from 1 (negatives count as violations)."""
    v = values.detach().cpu().double().numpy() if torch.is_tensor(values) else np.asarray(values, np.float64)
    if np.any(v < 0):
        return float("inf")
    sums = sum_pool(v, s)
    live = sums != 0.0
    return float(np.abs(sums[live] - 1.0).max()) if np.any(live) else 0.0


@dataclass(frozen=True)
class DistributionMap:
    """Per-superregion distributions at fine resolution.

    Every ``block_size x block_size`` block sums to 1 (within ``tol``) or is
    entirely zero.
    """

    values: np.ndarray
    block_size: int
    epsilon: float = EPS_FLOAT64
    tol: float = 1e-5

    def __post_init__(self):
        v = np.asarray(values_of(self.values), dtype=np.float64)
        _check_divisible(v.shape, self.block_size)
        if np.any(v < 0):
            raise ValueError("distribution entries must be non-negative")
        dev = distribution_violation(v, self.block_size)
        if dev > self.tol:
            raise ValueError(f"a block sums to 1 +/- {dev:.3g}, beyond tolerance {self.tol}")
        object.__setattr__(self, "values", v)

    @classmethod
    def from_features(cls, x, s: int, eps: float = EPS_FLOAT64) -> "DistributionMap":
        return cls(n2_normalize(np.asarray(x, np.float64), s, eps), s, eps)


def n2_normalize_grad_check(shape=(4, 4), s: int = 2, eps: float = EPS_FLOAT64, seed: int = 0,
                            step: float = 1e-5, functional: str = "random") -> float:
    """Max relative error of autograd vs central differences through n2_normalize.

    ``functional`` is ``"random"`` (a random smooth scalar of the output) or
    ``"block_sum"`` (sum of squared block sums, whose gradient is O(eps)).
    Returns the largest ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)``.
    """
    gen = torch.Generator().manual_seed(seed)
    x = (torch.rand(shape, generator=gen, dtype=torch.float64) + 0.1).requires_grad_(True)
    weights = torch.randn(shape, generator=gen, dtype=torch.float64)

    def scalar(inp):
        out = n2_normalize(inp, s, eps)
        if functional == "block_sum":
            return sum_pool(out, s).pow(2).sum()
        return (weights * out).sum() + (out * out).sum()

    (grad,) = torch.autograd.grad(scalar(x), x)
    numeric = torch.zeros_like(x)
    with torch.no_grad():
        flat = x.detach().clone().reshape(-1)
        for k in range(flat.numel()):
            orig = flat[k].item()
            flat[k] = orig + step
            up = scalar(flat.reshape(shape)).item()
            flat[k] = orig - step
            down = scalar(flat.reshape(shape)).item()
            flat[k] = orig
            numeric.reshape(-1)[k] = (up - down) / (2 * step)
    denom = torch.maximum(torch.maximum(grad.abs(), numeric.abs()), torch.full_like(grad, 1e-6))
    return float(((grad - numeric).abs() / denom).max())
