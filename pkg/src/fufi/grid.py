"""Flow-map data model, coarsening and structural verification."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import ShapeError

# Observed ranges of the reference datasets; used for soft validation only.
TAXIBJ_RANGES = {"temperature_c": (-24.6, 41.0), "wind_speed_mph": (0.0, 48.6)}
HAPPYVALLEY_RANGES = {
    "temperature_c": (-15.0, 39.0),
    "wind_speed_mph": (0.1, 15.5),
    "ticket_price": (29.9, 260.0),
}


def _readonly(arr):
    arr = np.asarray(arr)
    if arr.flags.writeable:
        arr = arr.copy()
        arr.flags.writeable = False
    return arr


def values_of(x):
    """Return the raw array behind a FlowMap, or ``x`` itself as an array."""
    return x.values if isinstance(x, FlowMap) else np.asarray(x)


@dataclass(frozen=True)
class FlowMap:
    """A non-negative ``height x width`` grid of flow volumes at one time."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeError(f"flow map must be a non-empty 2-D grid, got shape {arr.shape}")
        if np.any(arr < 0) or not np.all(np.isfinite(arr)):
            raise ValueError("flow map entries must be finite and non-negative")
        object.__setattr__(self, "values", _readonly(arr))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ExternalRecord:
    day_of_week: int
    hour_of_day: int
    weather_id: int
    temperature_c: float
    wind_speed_mph: float
    is_holiday: int
    ticket_price: Optional[float] = None

    def validate(self, weather_vocab: int, ranges: Optional[dict] = None):
        """Raise on out-of-vocabulary categories; warn on out-of-range readings."""
        if not 0 <= self.day_of_week <= 6:
            raise ValueError(f"day_of_week {self.day_of_week} outside 0..6")
        if not 0 <= self.hour_of_day <= 23:
            raise ValueError(f"hour_of_day {self.hour_of_day} outside 0..23")
        if not 0 <= self.weather_id < weather_vocab:
            raise ValueError(f"weather_id {self.weather_id} outside vocabulary of size {weather_vocab}")
        if self.is_holiday not in (0, 1):
            raise ValueError(f"is_holiday must be 0 or 1, got {self.is_holiday}")
        for key, (lo, hi) in (ranges or {}).items():
            value = getattr(self, key)
            if value is not None and not lo <= value <= hi:
                warnings.warn(f"{key}={value} outside the declared range [{lo}, {hi}]", stacklevel=2)


@dataclass(frozen=True)
class GeoFeatureStack:
    """Per-cell POI-category and road-tier densities at one resolution."""

    poi_density: np.ndarray
    road_density: np.ndarray
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        poi = np.asarray(self.poi_density, dtype=np.float64)
        road = np.asarray(self.road_density, dtype=np.float64)
        if poi.ndim != 3 or road.ndim != 3 or road.shape[0] != 3:
            raise ShapeError("geo features need poi (C_poi, H, W) and road (3, H, W) stacks")
        if poi.shape[1:] != road.shape[1:]:
            raise ShapeError(f"poi grid {poi.shape[1:]} and road grid {road.shape[1:]} differ")
        if np.any(poi < 0) or np.any(road < 0):
            raise ValueError("geo densities must be non-negative")
        object.__setattr__(self, "poi_density", _readonly(poi))
        object.__setattr__(self, "road_density", _readonly(road))
        if self.embedding is not None:
            emb = np.asarray(self.embedding, dtype=np.float64)
            if emb.ndim != 3 or emb.shape[1:] != poi.shape[1:]:
                raise ShapeError("geo embedding must be (C_g, H, W) on the same grid")
            object.__setattr__(self, "embedding", _readonly(emb))

    @property
    def raw(self) -> np.ndarray:
        """Concatenated raw features ``(C_poi + 3, H, W)``."""
        return np.concatenate([self.poi_density, self.road_density], axis=0)

    @property
    def shape(self):
        return self.poi_density.shape[1:]

    def pooled(self, factor: int) -> "GeoFeatureStack":
        """Densities on a grid ``factor`` times coarser (block means)."""
        if factor == 1:
            return GeoFeatureStack(self.poi_density, self.road_density)
        area = float(factor * factor)
        return GeoFeatureStack(
            kernels.block_sum(self.poi_density, factor) / area,
            kernels.block_sum(self.road_density, factor) / area,
        )


@dataclass(frozen=True)
class FlowDataset:
    """Time-ordered fine-grained flow maps with aligned covariates.

    ``flows`` has shape ``(T, H, W)``. Coarse maps are never stored; derive
    them with :func:`coarsen`.
    """

    flows: np.ndarray
    timestamps: np.ndarray
    interval_minutes: int = 30
    externals: Optional[Sequence[ExternalRecord]] = None
    geo: Optional[GeoFeatureStack] = None
    weather_vocab: int = 16
    has_ticket_price: bool = False
    upscale_n: Optional[int] = None

    def __post_init__(self):
        flows = np.asarray(self.flows)
        if flows.ndim != 3 or min(flows.shape) < 1:
            raise ShapeError(f"flows must be (T, H, W), got {flows.shape}")
        if np.any(flows < 0):
            raise ValueError("flow volumes must be non-negative")
        object.__setattr__(self, "flows", _readonly(flows))
        ts = np.asarray(self.timestamps, dtype="datetime64[s]")
        if ts.shape != (flows.shape[0],):
            raise ShapeError(f"{ts.shape[0] if ts.ndim else 0} timestamps for {flows.shape[0]} maps")
        object.__setattr__(self, "timestamps", _readonly(ts))
        if self.externals is not None:
            ext = tuple(self.externals)
            if len(ext) != flows.shape[0]:
                raise ShapeError(f"{len(ext)} external rows for {flows.shape[0]} maps")
            for rec in ext:
                rec.validate(self.weather_vocab)
                if self.has_ticket_price and rec.ticket_price is None:
                    raise ValueError("dataset declares ticket_price but a record lacks it")
            object.__setattr__(self, "externals", ext)
        if self.geo is not None and tuple(self.geo.shape) != flows.shape[1:]:
            raise ShapeError(f"geo grid {self.geo.shape} does not match flow grid {flows.shape[1:]}")

    def __len__(self):
        return self.flows.shape[0]

    @property
    def shape(self):
        return self.flows.shape[1:]

    def map(self, t: int) -> FlowMap:
        return FlowMap(self.flows[t])

    @property
    def maps(self):
        return [FlowMap(f) for f in self.flows]


@dataclass(frozen=True)
class DatasetSplit:
    train: range
    validation: range
    test: range

    def __post_init__(self):
        if not (self.train.stop == self.validation.start and self.validation.stop == self.test.start):
            raise ValueError("split ranges must be contiguous and ordered train < validation < test")


def coarsen(fine, n: int):
    """Aggregate every ``n x n`` block of a fine map (or ``(..., H, W)`` stack).

    Returns a :class:`FlowMap` when given one, otherwise a float64 array with
    the leading axes preserved.
    """
    n = int(n)
    if n < 1:
        raise ValueError(f"scaling factor must be >= 1, got {n}")
    arr = values_of(fine)
    if arr.ndim < 2:
        raise ShapeError(f"expected at least 2 dims, got shape {arr.shape}")
    for axis, name in ((-2, "height"), (-1, "width")):
        if arr.shape[axis] % n:
            raise ShapeError(f"{name} {arr.shape[axis]} is not divisible by scaling factor {n}")
    lead = arr.shape[:-2]
    out = kernels.block_sum(arr.reshape((-1,) + arr.shape[-2:]), n)
    out = out.reshape(lead + out.shape[-2:])
    return FlowMap(out) if isinstance(fine, FlowMap) else out


@dataclass(frozen=True)
class StructuralReport:
    max_rel_error: float
    rel_tol: float
    passed: bool
    worst_block: tuple


def verify_structural(coarse, fine, n: int, rel_tol: float = 1e-6) -> StructuralReport:
    """Check that each coarse cell equals the sum of its fine block.

    The per-block error is ``|coarse - block_sum| / max(|coarse|, 1)``.
    Works on single maps or stacks with matching leading axes.
    """
    c = values_of(coarse).astype(np.float64)
    f = values_of(fine)
    if f.shape[:-2] != c.shape[:-2] or (c.shape[-2] * n, c.shape[-1] * n) != f.shape[-2:]:
        raise ShapeError(f"coarse {c.shape} x {n} does not match fine {f.shape}")
    err = np.abs(c - coarsen(f, n)) / np.maximum(np.abs(c), 1.0)
    worst = np.unravel_index(int(np.argmax(err)), err.shape) if err.size else ()
    max_err = float(err.max()) if err.size else 0.0
    return StructuralReport(max_err, rel_tol, max_err <= rel_tol, tuple(int(i) for i in worst))


def split(ds, ratios=(2, 1, 1)) -> DatasetSplit:
    """Contiguous time-ordered train/validation/test partition.

    Validation and test get ``floor(T * r / sum(r))`` samples; the remainder
    goes to train.
    """
    total = len(ds) if not isinstance(ds, int) else ds
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios}")
    if total < 3:
        raise ValueError(f"need at least 3 samples to split, got {total}")
    whole = float(sum(ratios))
    n_val = int(np.floor(total * ratios[1] / whole))
    n_test = int(np.floor(total * ratios[2] / whole))
    n_val, n_test = max(n_val, 1), max(n_test, 1)
    n_train = total - n_val - n_test
    if n_train < 1:
        raise ValueError(f"{total} samples are too few for ratios {ratios}")
    return DatasetSplit(range(0, n_train), range(n_train, n_train + n_val), range(n_train + n_val, total))
