"""One-sided Wilcoxon signed-rank test for paired errors."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import norm, rankdata

from . import kernels

EXACT_MAX_N = 20


def wilcoxon_signed_rank(errors_a, errors_b, exact=None):
    """p-value for the alternative "errors of A are smaller than those of B".

    Zero differences are dropped and tied magnitudes share their mean rank.
    The null distribution of the positive-rank sum is enumerated exactly for
    ``n <= 20`` and approximated by a continuity-corrected normal above.
    """
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"paired sequences must have equal 1-D shapes, got {a.shape} and {b.shape}")
    if a.size < 6:
        raise ValueError(f"need at least 6 pairs, got {a.size}")
    d = a - b
    d = d[d != 0]
    if d.size == 0:
        raise ValueError("all paired differences are zero; the test is undefined")
    ranks = rankdata(np.abs(d))
    w_plus = float(ranks[d > 0].sum())
    n = d.size
    if exact is None:
        exact = n <= EXACT_MAX_N
    if exact:
        ranks2 = np.rint(2 * ranks).astype(np.int64)
        counts = kernels.wilcoxon_null_counts(ranks2)
        obs = int(round(2 * w_plus))
        return float(counts[: obs + 1].sum() / counts.sum())
    mean = n * (n + 1) / 4.0
    _, tie_sizes = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - float(np.sum(tie_sizes ** 3 - tie_sizes)) / 48.0
    z = (w_plus - mean + 0.5) / math.sqrt(var)
    return float(norm.cdf(z))
