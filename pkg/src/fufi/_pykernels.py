"""NumPy implementations of the block kernels.

Same contracts as the compiled ``_ckernels`` module; used when the extension
is not built or when ``FUFI_PURE_PYTHON=1``.
"""
import numpy as np


def block_sum(x, s):
    c, h, w = x.shape
    return x.reshape(c, h // s, s, w // s, s).sum(axis=(2, 4))


def block_normalize(x, s, eps):
    sums = block_sum(x, s)
    return x / (np.repeat(np.repeat(sums, s, axis=1), s, axis=2) + eps)


def block_kl(pred, truth, s, eps_kl):
    c, h, w = pred.shape
    p = pred.reshape(c, h // s, s, w // s, s)
    q = truth.reshape(c, h // s, s, w // s, s)
    live = q.sum(axis=(2, 4)) > 0.0
    pos = p > 0.0
    safe_p = np.where(pos, p, 1.0)
    terms = np.where(pos, p * (np.log(safe_p) - np.log(np.maximum(q, eps_kl))), 0.0)
    return float(terms.sum(axis=(2, 4))[live].sum())


def wilcoxon_null_counts(ranks2):
    counts = np.zeros(int(ranks2.sum()) + 1, dtype=np.float64)
    counts[0] = 1.0
    reach = 0
    for r in ranks2:
        r = int(r)
        reach += r
        counts[r:reach + 1] += counts[: reach + 1 - r].copy()
    return counts
