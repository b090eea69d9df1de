"""External-factor fusion subnet.

Categorical covariates (day of week, hour, weather) go through embedding
tables; continuous ones (temperature, wind, holiday flag and optionally the
ticket price) are min-max scaled with train-split statistics. The joint
vector feeds two dense layers that emit a one-channel coarse map, which
sub-pixel blocks then enlarge to the fine grid.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn

from .grid import ExternalRecord
from .layers import SubPixelBlock

CONTINUOUS = ("temperature_c", "wind_speed_mph", "is_holiday")


@dataclass
class FusionConfig:
    coarse_dims: Tuple[int, int]
    upsample_blocks: int = 2
    weather_vocab: int = 16
    embed_dow: int = 2
    embed_hour: int = 3
    embed_weather: int = 3
    dense_hidden: int = 128
    dropout: float = 0.3
    continuous: List[str] = field(default_factory=lambda: list(CONTINUOUS))
    con_min: Optional[List[float]] = None
    con_max: Optional[List[float]] = None

    def __post_init__(self):
        self.coarse_dims = tuple(int(v) for v in self.coarse_dims)
        if min(self.embed_dow, self.embed_hour, self.embed_weather) < 1:
            raise ValueError("embedding sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.upsample_blocks < 0:
            raise ValueError("upsample_blocks must be >= 0")

    @property
    def categorical_size(self):
        return self.embed_dow + self.embed_hour + self.embed_weather

    @property
    def embedding_size(self):
        return len(self.continuous) + self.categorical_size

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_records(cls, records: Sequence[ExternalRecord], coarse_dims, upsample_blocks,
                     weather_vocab=16, ticket_price=False, **kwargs) -> "FusionConfig":
        """Config with min-max statistics taken from ``records`` (the train split)."""
        cols = list(CONTINUOUS) + (["ticket_price"] if ticket_price else [])
        table = np.array([[getattr(r, c) for c in cols] for r in records], dtype=np.float64)
        return cls(coarse_dims, upsample_blocks, weather_vocab, continuous=cols,
                   con_min=table.min(axis=0).tolist(), con_max=table.max(axis=0).tolist(), **kwargs)


@dataclass
class ExternalEmbedding:
    e_con: torch.Tensor
    e_cat: torch.Tensor

    @property
    def e(self):
        return torch.cat([self.e_con, self.e_cat], dim=-1)


def encode_records(records: Sequence[ExternalRecord], cfg: FusionConfig):
    """Index tensor ``(T, 3)`` and normalised continuous tensor ``(T, k)``."""
    cat = torch.tensor([[r.day_of_week, r.hour_of_day, r.weather_id] for r in records], dtype=torch.long)
    for r in records:
        r.validate(cfg.weather_vocab)
    raw = np.array([[np.nan if getattr(r, c) is None else getattr(r, c) for c in cfg.continuous] for r in records],
                   dtype=np.float64)
    if np.isnan(raw).any():
        raise ValueError("a record lacks a continuous feature the model expects")
    lo = np.zeros(raw.shape[1]) if cfg.con_min is None else np.asarray(cfg.con_min)
    hi = np.ones(raw.shape[1]) if cfg.con_max is None else np.asarray(cfg.con_max)
    span = np.where(hi > lo, hi - lo, 1.0)
    con = torch.tensor((raw - lo) / span, dtype=torch.float32)
    return cat, con


class ExternalFusion(nn.Module):
    """Embeddings + dense mixing + coarse/fine external feature maps.

    With ``shared_upsampler`` a single factor-2 sub-pixel block is reused for
    every enlargement step (the pyramid setting); otherwise
    ``cfg.upsample_blocks`` independent blocks are chained.
    """

    def __init__(self, cfg: FusionConfig, shared_upsampler=False):
        super().__init__()
        self.cfg = cfg
        self.dow = nn.Embedding(7, cfg.embed_dow)
        self.hour = nn.Embedding(24, cfg.embed_hour)
        self.weather = nn.Embedding(cfg.weather_vocab, cfg.embed_weather)
        h, w = cfg.coarse_dims
        self.dense = nn.Sequential(
            nn.Linear(cfg.embedding_size, cfg.dense_hidden),
            nn.ReLU(inplace=True),
            nn.Dropout(cfg.dropout),
            nn.Linear(cfg.dense_hidden, h * w),
        )
        self.shared_upsampler = shared_upsampler
        if shared_upsampler:
            self.upsampler = SubPixelBlock(1, 1, 2)
        else:
            self.upsamplers = nn.ModuleList(SubPixelBlock(1, 1, 2) for _ in range(cfg.upsample_blocks))

    def embed(self, cat, con) -> ExternalEmbedding:
        if bool((cat[:, 2] >= self.cfg.weather_vocab).any()) or bool((cat < 0).any()):
            raise ValueError("categorical index outside the embedding vocabulary")
        e_cat = torch.cat([self.dow(cat[:, 0]), self.hour(cat[:, 1]), self.weather(cat[:, 2])], dim=-1)
        return ExternalEmbedding(con.to(e_cat.dtype), e_cat)

    def coarse(self, emb: ExternalEmbedding):
        h, w = self.cfg.coarse_dims
        return self.dense(emb.e).reshape(-1, 1, h, w)

    def fine(self, h_c_e, steps=None):
        """Enlarge by ``2 ** steps`` (default: the configured block count)."""
        if self.shared_upsampler:
            out = h_c_e
            for _ in range(self.cfg.upsample_blocks if steps is None else steps):
                out = self.upsampler(out)
            return out
        out = h_c_e
        for block in self.upsamplers[: steps]:
            out = block(out)
        return out

    def forward(self, cat, con):
        h_c = self.coarse(self.embed(cat, con))
        return h_c, self.fine(h_c)


def embed_external(rec: ExternalRecord, fusion: ExternalFusion) -> ExternalEmbedding:
    cat, con = encode_records([rec], fusion.cfg)
    return fusion.embed(cat, con)


def fuse_coarse(emb: ExternalEmbedding, fusion: ExternalFusion):
    return fusion.coarse(emb)


def fuse_fine(h_c_e, fusion: ExternalFusion, steps=None):
    return fusion.fine(h_c_e, steps)
