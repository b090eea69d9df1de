"""Backend selection for the NumPy-side block kernels.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``FUFI_PURE_PYTHON`` is set to ``1``, the NumPy
fallback in :mod:`fufi._pykernels` is used. Both expose the same functions.
"""
import os

import numpy as np

from . import _pykernels

BACKENDS = {"python": _pykernels}

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None
else:
    BACKENDS["compiled"] = _ckernels

if _ckernels is not None and os.environ.get("FUFI_PURE_PYTHON") != "1":
    BACKEND = "compiled"
else:
    BACKEND = "python"


def get_backend(name=None):
    """Return the kernel module named ``name`` (default: the active one)."""
    name = BACKEND if name is None else name
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


def as_stack(x):
    """View a 2-D grid or 3-D stack as a C-contiguous float64 ``(C, H, W)`` array."""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim == 2:
        return arr[None]
    if arr.ndim != 3:
        raise ValueError(f"expected a 2-D grid or 3-D stack, got shape {arr.shape}")
    return arr


def block_sum(x, s, backend=None):
    return get_backend(backend).block_sum(as_stack(x), int(s))


def block_normalize(x, s, eps, backend=None):
    return get_backend(backend).block_normalize(as_stack(x), int(s), float(eps))


def block_kl(pred, truth, s, eps_kl, backend=None):
    return float(get_backend(backend).block_kl(as_stack(pred), as_stack(truth), int(s), float(eps_kl)))


def wilcoxon_null_counts(ranks2, backend=None):
    ranks2 = np.ascontiguousarray(ranks2, dtype=np.int64)
    return get_backend(backend).wilcoxon_null_counts(ranks2)
