"""Deterministic synthetic flow datasets with known block distributions.

Each sample picks a *regime* from its hour-of-day bucket and weather; the
regime fixes how every superregion's volume is spread over its subregions.
Because the patterns are known, the error of the heuristic baselines can be
computed in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from .grid import ExternalRecord, FlowDataset, GeoFeatureStack
from .ops import n2_normalize, nn_upsample

RegimeKey = Tuple[int, int]  # (hour bucket, weather id)


def smooth_field(shape, sigma, rng):
    """Unit-variance Gaussian random field smoothed with a Gaussian kernel."""
    field_ = gaussian_filter(rng.standard_normal(shape), sigma=sigma, mode="wrap")
    std = field_.std()
    return (field_ - field_.mean()) / (std if std > 0 else 1.0)


def uniform_pattern(height, width, n):
    return np.full((height, width), 1.0 / (n * n))


def random_pattern(height, width, n, rng, sharpness=1.5, sigma=1.0):
    """Random block distribution: block-normalised ``exp(sharpness * field)``."""
    weights = np.exp(sharpness * smooth_field((height, width), sigma, rng))
    return n2_normalize(weights, n, 0.0)


def random_regimes(height, width, n, hour_buckets=1, weather_ids=(0,), seed=0,
                   sharpness=1.5, sigma=1.0) -> Dict[RegimeKey, np.ndarray]:
    rng = np.random.default_rng(seed)
    return {
        (b, w): random_pattern(height, width, n, rng, sharpness, sigma)
        for b in range(hour_buckets)
        for w in weather_ids
    }


@dataclass
class SyntheticSpec:
    fine_height: int
    fine_width: int
    upscale_n: int
    num_samples: int
    regimes: Dict[RegimeKey, np.ndarray]
    hour_buckets: int = 1
    volume_range: Tuple[float, float] = (50.0, 150.0)
    noise_level: float = 0.0
    seed: int = 0
    interval_minutes: int = 30
    start: str = "2013-07-01T00:00:00"
    weather_vocab: int = 16
    holiday_rate: float = 0.05
    ticket_price: bool = False
    geo_poi_channels: Optional[int] = None
    temperature_range: Tuple[float, float] = (-5.0, 35.0)
    wind_range: Tuple[float, float] = (0.0, 20.0)

    def validate(self):
        n = self.upscale_n
        if n < 1 or self.fine_height % n or self.fine_width % n:
            raise ValueError(f"fine grid {self.fine_height}x{self.fine_width} not divisible by N={n}")
        if self.num_samples < 1:
            raise ValueError("num_samples must be positive")
        if not self.regimes:
            raise ValueError("at least one regime is required")
        lo, hi = self.volume_range
        if lo < 0 or hi < lo:
            raise ValueError(f"bad volume_range {self.volume_range}")
        if self.noise_level < 0:
            raise ValueError("noise_level must be non-negative")
        for (bucket, weather), pattern in self.regimes.items():
            if not 0 <= bucket < self.hour_buckets:
                raise ValueError(f"regime hour bucket {bucket} outside 0..{self.hour_buckets - 1}")
            if not 0 <= weather < self.weather_vocab:
                raise ValueError(f"regime weather id {weather} outside vocabulary")
            p = np.asarray(pattern, dtype=np.float64)
            if p.shape != (self.fine_height, self.fine_width):
                raise ValueError(f"regime {bucket, weather} pattern has shape {p.shape}")
            if np.any(p < 0):
                raise ValueError(f"regime {bucket, weather} has negative entries")
            sums = p.reshape(p.shape[0] // n, n, p.shape[1] // n, n).sum(axis=(1, 3))
            if np.abs(sums - 1.0).max() > 1e-9:
                raise ValueError(f"regime {bucket, weather} blocks do not sum to 1")
        missing = set(range(self.hour_buckets)) - {b for b, _ in self.regimes}
        if missing:
            raise ValueError(f"hour buckets {sorted(missing)} have no regime")

    def bucket_of(self, hour):
        return hour * self.hour_buckets // 24

    def candidates(self, bucket):
        return sorted(k for k in self.regimes if k[0] == bucket)

    @classmethod
    def from_dict(cls, cfg: dict) -> "SyntheticSpec":
        """Build from a JSON-style dict.

        ``regimes`` is either a list of ``{"hour_bucket", "weather_id",
        "pattern"}`` entries, or ``{"random": {...}}`` with keyword arguments
        for :func:`random_regimes`, or the string ``"uniform"``.
        """
        cfg = dict(cfg)
        h, w, n = cfg["fine_height"], cfg["fine_width"], cfg["upscale_n"]
        raw = cfg.pop("regimes")
        if raw == "uniform":
            regimes = {(b, 0): uniform_pattern(h, w, n) for b in range(cfg.get("hour_buckets", 1))}
        elif isinstance(raw, dict) and "random" in raw:
            opts = dict(raw["random"])
            opts.setdefault("hour_buckets", cfg.get("hour_buckets", 1))
            opts["weather_ids"] = tuple(opts.get("weather_ids", (0,)))
            regimes = random_regimes(h, w, n, **opts)
        else:
            regimes = {(int(r["hour_bucket"]), int(r["weather_id"])): np.asarray(r["pattern"], np.float64) for r in raw}
        for key in ("volume_range", "temperature_range", "wind_range"):
            if key in cfg:
                cfg[key] = tuple(cfg[key])
        return cls(regimes=regimes, **cfg)


def _timestamps(spec):
    start = np.datetime64(spec.start, "s")
    step = np.timedelta64(spec.interval_minutes * 60, "s")
    return start + step * np.arange(spec.num_samples)


def _calendar(ts):
    days = ts.astype("datetime64[D]")
    dow = ((days.astype(np.int64) + 3) % 7).astype(int)  # 1970-01-01 was a Thursday
    hours = ((ts - days).astype("timedelta64[h]").astype(np.int64)).astype(int)
    return days, dow, hours


def assign_regimes(spec, timestamps, rng):
    """Regime key per sample: hour bucket from the timestamp, weather drawn uniformly."""
    _, _, hours = _calendar(timestamps)
    keys = []
    for hour in hours:
        cands = spec.candidates(spec.bucket_of(int(hour)))
        keys.append(cands[rng.integers(len(cands))])
    return keys


def generate_synthetic(spec: SyntheticSpec) -> FlowDataset:
    """Generate a dataset; identical specs give bitwise-identical output."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.upscale_n
    ch, cw = spec.fine_height // n, spec.fine_width // n
    ts = _timestamps(spec)
    keys = assign_regimes(spec, ts, rng)

    lo, hi = spec.volume_range
    # whole-count volumes keep uniform splits (v / n^2) exactly representable
    volumes = np.round(rng.uniform(lo, hi, size=(spec.num_samples, ch, cw)))
    patterns = np.stack([np.asarray(spec.regimes[k], np.float64) for k in keys])
    flows = nn_upsample(volumes, n) * patterns
    if spec.noise_level > 0:
        sigma = spec.noise_level
        noise = np.exp(sigma * rng.standard_normal(flows.shape) - 0.5 * sigma * sigma)
        flows = np.clip(flows * noise, 0.0, None)

    days, dow, hours = _calendar(ts)
    unique_days = np.unique(days)
    holiday_days = set(unique_days[rng.random(len(unique_days)) < spec.holiday_rate].tolist())
    t_lo, t_hi = spec.temperature_range
    w_lo, w_hi = spec.wind_range
    temps = np.round(rng.uniform(t_lo, t_hi, spec.num_samples), 1)
    winds = np.round(rng.uniform(w_lo, w_hi, spec.num_samples), 1)
    prices = np.round(rng.uniform(29.9, 260.0, spec.num_samples), 1) if spec.ticket_price else None
    externals = [
        ExternalRecord(
            day_of_week=int(dow[t]),
            hour_of_day=int(hours[t]),
            weather_id=int(keys[t][1]),
            temperature_c=float(temps[t]),
            wind_speed_mph=float(winds[t]),
            is_holiday=int(days[t] in holiday_days),
            ticket_price=None if prices is None else float(prices[t]),
        )
        for t in range(spec.num_samples)
    ]

    geo = None
    if spec.geo_poi_channels:
        shape = (spec.fine_height, spec.fine_width)
        poi = np.stack([np.exp(smooth_field(shape, 1.5, rng)) for _ in range(spec.geo_poi_channels)])
        road = np.stack([np.clip(smooth_field(shape, 1.0, rng), 0.0, None) for _ in range(3)])
        geo = GeoFeatureStack(poi, road)

    return FlowDataset(
        flows=flows,
        timestamps=ts,
        interval_minutes=spec.interval_minutes,
        externals=externals,
        geo=geo,
        weather_vocab=spec.weather_vocab,
        has_ticket_price=spec.ticket_price,
        upscale_n=n,
    )


def regime_frequencies(spec, timestamps):
    """Expected share of each regime over ``timestamps`` (weather uniform per bucket)."""
    _, _, hours = _calendar(np.asarray(timestamps, dtype="datetime64[s]"))
    freqs = {k: 0.0 for k in spec.regimes}
    for hour in hours:
        cands = spec.candidates(spec.bucket_of(int(hour)))
        for k in cands:
            freqs[k] += 1.0 / len(cands)
    total = float(len(hours))
    return {k: v / total for k, v in freqs.items()}


def ha_rmse_floor(spec, timestamps):
    """Closed-form lower bound on the RMSE of any fixed allocation (e.g. HA).

    A fixed fraction map cannot follow the regime switches, so its squared
    error is at least ``E[V^2] * sum_r pi_r * mean((p_r - p_bar)^2)`` with
    ``p_bar`` the frequency-weighted mean pattern.
    """
    freqs = regime_frequencies(spec, timestamps)
    lo, hi = spec.volume_range
    mean_sq_volume = (lo * lo + lo * hi + hi * hi) / 3.0
    p_bar = sum(f * np.asarray(spec.regimes[k]) for k, f in freqs.items())
    spread = sum(f * np.mean((np.asarray(spec.regimes[k]) - p_bar) ** 2) for k, f in freqs.items())
    return float(np.sqrt(mean_sq_volume * spread))
