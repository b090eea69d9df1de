"""Single-pass UrbanFM inference network.

Coarse map (optionally fused with the coarse external map) -> 9x9 conv ->
M residual blocks -> conv3x3 + BN -> additive skip -> n sub-pixel blocks ->
concat fine external map -> 9x9 conv -> |.| -> N^2-normalisation -> times
the nearest-neighbour-replicated coarse map.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn as nn

from .external import ExternalFusion, FusionConfig
from .layers import ResidualBlock, SubPixelBlock, log2_int
from .ops import EPS_FLOAT32, n2_normalize, nn_upsample


@dataclass
class FMConfig:
    n_upscale: int = 4
    res_blocks: int = 16
    filters: int = 64
    out_channels: int = 1
    use_external: bool = True
    eps: float = EPS_FLOAT32
    distributional: bool = True

    def __post_init__(self):
        if self.n_upscale not in (2, 4, 8, 16):
            raise ValueError(f"n_upscale must be one of 2, 4, 8, 16; got {self.n_upscale}")
        if self.res_blocks < 1 or self.filters < 1 or self.out_channels < 1:
            raise ValueError("res_blocks, filters and out_channels must be >= 1")


class FMOutput(NamedTuple):
    fine_pred: torch.Tensor
    distribution: Optional[torch.Tensor]
    hidden: torch.Tensor


class UrbanFM(nn.Module):
    kind = "urbanfm"

    def __init__(self, cfg: FMConfig, coarse_dims, fusion_cfg: Optional[FusionConfig] = None):
        super().__init__()
        self.cfg = cfg
        self.coarse_dims = tuple(int(v) for v in coarse_dims)
        n_blocks = log2_int(cfg.n_upscale)
        F = cfg.filters
        if cfg.use_external:
            if fusion_cfg is None:
                fusion_cfg = FusionConfig(self.coarse_dims, n_blocks)
            if tuple(fusion_cfg.coarse_dims) != self.coarse_dims or fusion_cfg.upsample_blocks != n_blocks:
                raise ValueError("fusion config does not match the model grid")
            self.fusion = ExternalFusion(fusion_cfg)
        else:
            self.fusion = None
        extra = 1 if cfg.use_external else 0
        self.register_buffer("flow_scale", torch.tensor(1.0))

        self.entry = nn.Sequential(nn.Conv2d(1 + extra, F, 9, padding=4), nn.ReLU(inplace=True))
        self.res_blocks = nn.Sequential(*[ResidualBlock(F) for _ in range(cfg.res_blocks)])
        self.post_res = nn.Sequential(nn.Conv2d(F, F, 3, padding=1), nn.BatchNorm2d(F))
        self.upsample = nn.Sequential(*[SubPixelBlock(F, F, 2) for _ in range(n_blocks)])
        self.head = nn.Conv2d(F + extra, cfg.out_channels, 9, padding=4)

    @property
    def fusion_cfg(self):
        return None if self.fusion is None else self.fusion.cfg

    def _check(self, coarse, cat, con):
        if coarse.dim() != 4 or coarse.shape[1] != 1 or tuple(coarse.shape[-2:]) != self.coarse_dims:
            raise ValueError(f"expected coarse batch (B, 1, {self.coarse_dims[0]}, {self.coarse_dims[1]}), got {tuple(coarse.shape)}")
        if self.cfg.use_external != (cat is not None):
            raise ValueError("external inputs must be given exactly when use_external is set")

    def forward(self, coarse, cat=None, con=None) -> FMOutput:
        self._check(coarse, cat, con)
        x = coarse / self.flow_scale
        h_f_e = None
        if self.fusion is not None:
            h_c_e, h_f_e = self.fusion(cat, con)
            x = torch.cat([x, h_c_e], dim=1)
        low = self.entry(x)
        high = self.post_res(self.res_blocks(low)) + low
        hidden = self.upsample(high)
        if h_f_e is not None:
            hidden = torch.cat([hidden, h_f_e], dim=1)
        out = self.head(hidden)
        if self.cfg.out_channels > 1:
            out = out.mean(dim=1, keepdim=True)
        if not self.cfg.distributional:
            return FMOutput(out * self.flow_scale, None, hidden)
        dist = n2_normalize(out.abs(), self.cfg.n_upscale, self.cfg.eps)
        return FMOutput(nn_upsample(coarse, self.cfg.n_upscale) * dist, dist, hidden)

    def config_dict(self):
        return {"model": asdict(self.cfg), "coarse_dims": list(self.coarse_dims),
                "fusion": None if self.fusion is None else self.fusion.cfg.to_dict()}

    @classmethod
    def from_config(cls, cfg: dict):
        fusion = cfg.get("fusion")
        return cls(FMConfig(**cfg["model"]), cfg["coarse_dims"], None if fusion is None else FusionConfig(**fusion))


def build_urbanfm(cfg: FMConfig, coarse_dims, fusion_cfg=None, seed=0) -> UrbanFM:
    """UrbanFM with seed-determined initial weights."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return UrbanFM(cfg, coarse_dims, fusion_cfg)


def build_urbanfm_sl(cfg: FMConfig, coarse_dims, fusion_cfg=None, seed=0) -> UrbanFM:
    """The structural-loss ablation: same backbone, unconstrained output."""
    variant = FMConfig(**{**asdict(cfg), "distributional": False})
    return build_urbanfm(variant, coarse_dims, fusion_cfg, seed)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def forward_urbanfm(model: UrbanFM, coarse, cat=None, con=None) -> FMOutput:
    return model(coarse, cat, con)


def forward_urbanfm_sl(model: UrbanFM, coarse, cat=None, con=None):
    return model(coarse, cat, con).fine_pred
