"""RMSE, MAE and MAPE over sequences of fine-grained maps.

All three are per-element means over every sample; MAPE skips elements whose
truth is zero.
"""
from __future__ import annotations

import math

import numpy as np


class MetricAccumulator:
    """Streaming accumulator; per-batch partial sums are combined with ``math.fsum``."""

    def __init__(self):
        self._sq, self._abs, self._ape = [], [], []
        self.count = 0
        self.ape_count = 0

    def update(self, pred, truth):
        p = np.asarray(pred, dtype=np.float64)
        t = np.asarray(truth, dtype=np.float64)
        if p.shape != t.shape:
            raise ValueError(f"prediction shape {p.shape} does not match truth {t.shape}")
        err = p - t
        self._sq.append(float(np.sum(err * err)))
        self._abs.append(float(np.sum(np.abs(err))))
        mask = t > 0
        self._ape.append(float(np.sum(np.abs(err[mask]) / t[mask])))
        self.count += err.size
        self.ape_count += int(mask.sum())
        return self

    def result(self):
        if self.count == 0:
            raise ValueError("no samples were accumulated")
        return {
            "rmse": math.sqrt(math.fsum(self._sq) / self.count),
            "mae": math.fsum(self._abs) / self.count,
            "mape": math.fsum(self._ape) / self.ape_count if self.ape_count else float("nan"),
        }


def _check(preds, truths):
    p, t = np.asarray(preds, np.float64), np.asarray(truths, np.float64)
    if p.size == 0:
        raise ValueError("metrics need at least one sample")
    return p, t


def rmse(preds, truths):
    p, t = _check(preds, truths)
    return MetricAccumulator().update(p, t).result()["rmse"]


def mae(preds, truths):
    p, t = _check(preds, truths)
    return MetricAccumulator().update(p, t).result()["mae"]


def mape(preds, truths):
    p, t = _check(preds, truths)
    return MetricAccumulator().update(p, t).result()["mape"]


def all_metrics(preds, truths):
    p, t = _check(preds, truths)
    return MetricAccumulator().update(p, t).result()
