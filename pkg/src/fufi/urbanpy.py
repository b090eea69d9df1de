"""Progressive UrbanPy pyramid.

Level ``l`` lifts features from scale ``s_{l-1}`` to ``s_l`` (``s_0 = 1``).
A proposal net turns the highway-aggregated features, the previous external
map and the previous distribution into a prototype distribution; a one-conv
correction net reads the upsampled features and the current external map.
The two are mixed and renormalised, and the result multiplies the replicated
coarse input to give that level's flow estimate.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ShapeError
from .external import ExternalFusion, FusionConfig
from .geo import GeoEncoder, GeoEncoderConfig
from .layers import ResidualBlock, SubPixelBlock, log2_int
from .ops import EPS_FLOAT32, n2_normalize, nn_upsample


@dataclass
class PyramidConfig:
    scales: List[int] = field(default_factory=lambda: [2, 4, 8])
    res_blocks_per_level: int = 4
    filters: int = 64
    proposal_depth: int = 4
    loss_alpha: float = 1e-2
    geo_channels: int = 8
    use_local_structure: bool = False
    use_distributional_loss: bool = True
    use_external: bool = True
    eps: float = EPS_FLOAT32

    def __post_init__(self):
        self.scales = [int(s) for s in self.scales]
        prev = 1
        for s in self.scales:
            if s <= prev or s % prev or s // prev < 2:
                raise ValueError(f"scales must grow by integer ratios >= 2, got {self.scales}")
            prev = s
        if not 0.0 <= self.loss_alpha <= 1.0:
            raise ValueError(f"loss_alpha must be in [0, 1], got {self.loss_alpha}")
        if min(self.res_blocks_per_level, self.proposal_depth) < 0 or self.filters < 1:
            raise ValueError("depths must be >= 0 and filters >= 1")

    @property
    def n_upscale(self):
        return self.scales[-1]

    def ratios(self):
        prev = [1] + self.scales[:-1]
        return [s // p for s, p in zip(self.scales, prev)]


@dataclass
class LevelState:
    scale: int
    features_pre: torch.Tensor  # highway-aggregated, at s_{l-1}
    features_post: torch.Tensor  # at s_l
    external_map: Optional[torch.Tensor]
    proposal: torch.Tensor
    correction: torch.Tensor
    distribution: torch.Tensor
    flow_pred: torch.Tensor


def nonshared_conv(x, weight, bias=None):
    """Strided convolution with a separate kernel per output location.

    ``x`` is ``(B, C, I*k, J*k)``, ``weight`` is ``(I, J, O, C, k, k)`` and
    ``bias`` is ``(I, J, O)``. Output ``(B, O, I, J)``: location ``(i, j)``
    correlates the ``k x k`` patch of superregion ``(i, j)`` with its own
    kernel. With identical kernels this equals ``conv2d(x, w, stride=k)``.
    """
    I, J, O, C, k, k2 = weight.shape
    if k != k2:
        raise ShapeError("non-shared kernels must be square")
    B, Cx, H, W = x.shape
    if Cx != C or (H, W) != (I * k, J * k):
        raise ShapeError(f"input {tuple(x.shape)} does not fit a {I}x{J} kernel grid of width {k} and {C} channels")
    patches = x.reshape(B, C, I, k, J, k)
    out = torch.einsum("bcikjl,ijockl->boij", patches, weight)
    if bias is not None:
        if tuple(bias.shape) != (I, J, O):
            raise ShapeError(f"bias must be ({I}, {J}, {O}), got {tuple(bias.shape)}")
        out = out + bias.permute(2, 0, 1)
    return out


class NonSharedConv2d(nn.Module):
    def __init__(self, grid, in_channels, out_channels, kernel):
        super().__init__()
        I, J = grid
        bound = 1.0 / math.sqrt(in_channels * kernel * kernel)
        self.weight = nn.Parameter(torch.empty(I, J, out_channels, in_channels, kernel, kernel).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.empty(I, J, out_channels).uniform_(-bound, bound))

    def forward(self, x):
        return nonshared_conv(x, self.weight, self.bias)


class ProposalNet(nn.Module):
    def __init__(self, cfg: PyramidConfig, ratio, scale, grid, ext_channels):
        super().__init__()
        F_ = cfg.filters
        self.scale = scale
        self.local = cfg.use_local_structure
        self.entry = nn.Sequential(nn.Conv2d(F_ + ext_channels + 1, F_, 3, padding=1), nn.ReLU(inplace=True))
        self.blocks = nn.Sequential(*[ResidualBlock(F_) for _ in range(cfg.proposal_depth)])
        self.up = SubPixelBlock(F_, F_, ratio)
        if self.local:
            self.bottleneck = nn.Conv2d(F_, 2, 1)
            self.local_conv = NonSharedConv2d(grid, 2 + cfg.geo_channels, scale * scale, scale)
        else:
            self.head = nn.Conv2d(F_, 1, 3, padding=1)

    def forward(self, h_star, ext, prev_dist, geo=None):
        parts = [h_star] + ([ext] if ext is not None else []) + [prev_dist]
        h = self.up(self.blocks(self.entry(torch.cat(parts, dim=1))))
        if self.local:
            if geo is None:
                raise ValueError("local structure is enabled but no geographic embedding was given")
            z = torch.cat([self.bottleneck(h), geo.expand(h.shape[0], -1, -1, -1)], dim=1)
            out = F.pixel_shuffle(self.local_conv(z), self.scale)
        else:
            out = self.head(h)
        return out.abs()


class Level(nn.Module):
    def __init__(self, cfg: PyramidConfig, index, grid, ext_channels):
        super().__init__()
        self.scale = cfg.scales[index]
        self.ratio = cfg.ratios()[index]
        self.ext_steps = log2_int(self.ratio) if ext_channels else 0
        self.blocks = nn.Sequential(*[ResidualBlock(cfg.filters) for _ in range(cfg.res_blocks_per_level)])
        self.up = SubPixelBlock(cfg.filters, cfg.filters, self.ratio)
        self.proposal = ProposalNet(cfg, self.ratio, self.scale, grid, ext_channels)
        self.correction = nn.Conv2d(cfg.filters + ext_channels, 1, 3, padding=1)


class UrbanPy(nn.Module):
    kind = "urbanpy"

    def __init__(self, cfg: PyramidConfig, coarse_dims, fusion_cfg: Optional[FusionConfig] = None,
                 geo_cfg: Optional[GeoEncoderConfig] = None):
        super().__init__()
        self.cfg = cfg
        self.coarse_dims = tuple(int(v) for v in coarse_dims)
        ext = 1 if cfg.use_external else 0
        if cfg.use_external:
            steps = sum(log2_int(r) for r in cfg.ratios())
            if fusion_cfg is None:
                fusion_cfg = FusionConfig(self.coarse_dims, steps)
            if tuple(fusion_cfg.coarse_dims) != self.coarse_dims:
                raise ValueError("fusion config does not match the model grid")
            self.fusion = ExternalFusion(fusion_cfg, shared_upsampler=True)
        else:
            self.fusion = None
        self.register_buffer("flow_scale", torch.tensor(1.0))
        self.entry = nn.Sequential(nn.Conv2d(1 + ext, cfg.filters, 9, padding=4), nn.ReLU(inplace=True))
        self.levels = nn.ModuleList(Level(cfg, i, self.coarse_dims, ext) for i in range(len(cfg.scales)))
        self.geo_encoder = None
        if cfg.use_local_structure:
            if geo_cfg is None:
                raise ValueError("local structure needs a geographic encoder config")
            geo_cfg = GeoEncoderConfig(**{**asdict(geo_cfg), "code_channels": cfg.geo_channels})
            self.geo_encoder = GeoEncoder(geo_cfg)
            for p in self.geo_encoder.parameters():
                p.requires_grad_(False)
            I, J = self.coarse_dims
            for i, s in enumerate(cfg.scales):
                self.register_buffer(f"geo_code_{i}", torch.zeros(cfg.geo_channels, s * I, s * J))

    @property
    def fusion_cfg(self):
        return None if self.fusion is None else self.fusion.cfg

    def geo_code(self, i):
        return getattr(self, f"geo_code_{i}") if self.cfg.use_local_structure else None

    def set_geo_codes(self, codes):
        for i, code in enumerate(codes):
            buf = self.geo_code(i)
            if tuple(code.shape) != tuple(buf.shape):
                raise ShapeError(f"geo code for level {i + 1} has shape {tuple(code.shape)}, expected {tuple(buf.shape)}")
            buf.copy_(torch.as_tensor(code))

    def forward(self, coarse, cat=None, con=None) -> List[LevelState]:
        if coarse.dim() != 4 or coarse.shape[1] != 1 or tuple(coarse.shape[-2:]) != self.coarse_dims:
            raise ValueError(f"expected coarse batch (B, 1, {self.coarse_dims[0]}, {self.coarse_dims[1]}), got {tuple(coarse.shape)}")
        if self.cfg.use_external != (cat is not None):
            raise ValueError("external inputs must be given exactly when use_external is set")
        x = coarse / self.flow_scale
        ext_prev = None
        if self.fusion is not None:
            ext_prev = self.fusion.coarse(self.fusion.embed(cat, con))
            x = torch.cat([x, ext_prev], dim=1)
        h_prev = self.entry(x)
        dist_prev = torch.ones_like(coarse)
        history, prev_scale, states = [], 1, []
        for i, level in enumerate(self.levels):
            h_tilde = level.blocks(h_prev)
            history.append((h_tilde, prev_scale))
            h_star = highway_mean(history, prev_scale)
            h_post = level.up(h_star)
            ext_cur = None if ext_prev is None else self.fusion.fine(ext_prev, level.ext_steps)
            proto = n2_normalize(level.proposal(h_star, ext_prev, dist_prev, self.geo_code(i)), level.scale, self.cfg.eps)
            corr_in = h_post if ext_cur is None else torch.cat([h_post, ext_cur], dim=1)
            corr = n2_normalize(level.correction(corr_in).abs(), level.scale, self.cfg.eps)
            dist = mix_renormalize(proto, corr, level.scale, self.cfg.eps)
            flow = nn_upsample(coarse, level.scale) * dist
            states.append(LevelState(level.scale, h_star, h_post, ext_cur, proto, corr, dist, flow))
            h_prev, ext_prev, dist_prev, prev_scale = h_post, ext_cur, dist, level.scale
        return states

    def config_dict(self):
        return {
            "model": asdict(self.cfg),
            "coarse_dims": list(self.coarse_dims),
            "fusion": None if self.fusion is None else self.fusion.cfg.to_dict(),
            "geo": None if self.geo_encoder is None else asdict(self.geo_encoder.cfg),
        }

    @classmethod
    def from_config(cls, cfg: dict):
        fusion, geo = cfg.get("fusion"), cfg.get("geo")
        return cls(PyramidConfig(**cfg["model"]), cfg["coarse_dims"],
                   None if fusion is None else FusionConfig(**fusion),
                   None if geo is None else GeoEncoderConfig(**geo))


def highway_mean(history, scale):
    """Equal-weight mean of earlier representations upsampled to ``scale``."""
    ups = [nn_upsample(h, scale // s) for h, s in history]
    return ups[0] if len(ups) == 1 else torch.stack(ups).mean(dim=0)


def mix_renormalize(proto, corr, s, eps=None):
    """Symmetric mixture of two distribution maps, renormalised per block."""
    if tuple(proto.shape) != tuple(corr.shape):
        raise ShapeError(f"distribution maps differ in shape: {tuple(proto.shape)} vs {tuple(corr.shape)}")
    return n2_normalize(proto + corr, s, eps)


def build_urbanpy(cfg: PyramidConfig, coarse_dims, fusion_cfg=None, geo_cfg=None, seed=0) -> UrbanPy:
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return UrbanPy(cfg, coarse_dims, fusion_cfg, geo_cfg)


def forward_urbanpy(model: UrbanPy, coarse, cat=None, con=None) -> List[LevelState]:
    return model(coarse, cat, con)
