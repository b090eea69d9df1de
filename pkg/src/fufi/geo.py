"""Per-cell stacked denoising autoencoder for geographic features.

The raw stack (POI densities + three road tiers) is sparse; the encoder
compresses each cell's feature vector to ``code_channels`` values. Layers are
pretrained greedily with masking corruption, then the stack is fine-tuned
end to end on the reconstruction of the clean input.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import List, Sequence

import numpy as np
import torch
import torch.nn as nn

ACTIVATIONS = {"relu": nn.ReLU, "sigmoid": nn.Sigmoid, "linear": nn.Identity}


@dataclass
class GeoEncoderConfig:
    in_channels: int
    code_channels: int = 8
    hidden: List[int] = field(default_factory=lambda: [16])
    corruption: float = 0.2
    activation: str = "relu"
    layer_epochs: int = 300
    finetune_epochs: int = 300
    lr: float = 1e-2
    seed: int = 0

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {sorted(ACTIVATIONS)}")
        if not 0.0 <= self.corruption < 1.0:
            raise ValueError("corruption rate must be in [0, 1)")


class GeoEncoder(nn.Module):
    def __init__(self, cfg: GeoEncoderConfig):
        super().__init__()
        self.cfg = cfg
        sizes = [cfg.in_channels, *cfg.hidden, cfg.code_channels]
        act = ACTIVATIONS[cfg.activation]
        self.encoders = nn.ModuleList(nn.Sequential(nn.Linear(a, b), act()) for a, b in zip(sizes[:-1], sizes[1:]))
        # decoder k maps layer k's code back to its input; the outermost is linear
        self.decoders = nn.ModuleList(
            nn.Sequential(nn.Linear(b, a), act() if k > 0 else nn.Identity())
            for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        )
        self.register_buffer("mean", torch.zeros(cfg.in_channels))
        self.register_buffer("std", torch.ones(cfg.in_channels))

    def encode_vectors(self, x):
        h = (x - self.mean) / self.std
        for enc in self.encoders:
            h = enc(h)
        return h

    def reconstruct_vectors(self, x):
        h = self.encode_vectors(x)
        for dec in reversed(self.decoders):
            h = dec(h)
        return h * self.std + self.mean

    def encode(self, raw):
        """``(C_in, H, W)`` array or tensor -> ``(C_g, H, W)`` float32 tensor."""
        t = torch.as_tensor(np.asarray(raw, dtype=np.float32))
        c, h, w = t.shape
        with torch.no_grad():
            code = self.encode_vectors(t.reshape(c, -1).T)
        return code.T.reshape(-1, h, w).contiguous()

    def reconstruction_error(self, raw):
        """Mean squared reconstruction error relative to the feature variance."""
        t = torch.as_tensor(np.asarray(raw, dtype=np.float32))
        x = t.reshape(t.shape[0], -1).T
        with torch.no_grad():
            err = (self.reconstruct_vectors(x) - x).pow(2).mean()
        return float(err / x.var(dim=0).mean().clamp_min(1e-12))


def _cells(raws: Sequence) -> torch.Tensor:
    mats = [np.asarray(r, np.float32).reshape(np.shape(r)[0], -1).T for r in raws]
    return torch.as_tensor(np.concatenate(mats, axis=0))


def _mask(x, rate, gen):
    if rate <= 0:
        return x
    keep = torch.rand(x.shape, generator=gen) >= rate
    return x * keep


def _fit(params, loss_fn, epochs, lr):
    opt = torch.optim.Adam(params, lr=lr)
    for _ in range(epochs):
        opt.zero_grad()
        loss = loss_fn()
        loss.backward()
        opt.step()


def pretrain_geo_encoder(raws, cfg: GeoEncoderConfig):
    """Train on the cells of every raw stack in ``raws``; return ``(encoder, codes)``.

    ``raws`` is one ``(C_in, H, W)`` stack per pyramid level; ``codes`` holds
    the matching ``(C_g, H, W)`` embeddings.
    """
    if raws is None or len(raws) == 0:
        raise ValueError("geographic features are required to pretrain the encoder")
    if isinstance(raws, np.ndarray) and raws.ndim == 3:
        raws = [raws]
    for r in raws:
        if np.shape(r)[0] != cfg.in_channels:
            raise ValueError(f"raw geo stack has {np.shape(r)[0]} channels, encoder expects {cfg.in_channels}")
    gen = torch.Generator().manual_seed(cfg.seed)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        enc = GeoEncoder(cfg)
    x = _cells(raws)
    enc.mean.copy_(x.mean(dim=0))
    enc.std.copy_(x.std(dim=0).clamp_min(1e-6))
    h = (x - enc.mean) / enc.std
    for layer, (e, d) in enumerate(zip(enc.encoders, enc.decoders)):
        target = h.detach()
        _fit(list(e.parameters()) + list(d.parameters()),
             lambda: (d(e(_mask(target, cfg.corruption, gen))) - target).pow(2).mean(),
             cfg.layer_epochs, cfg.lr)
        with torch.no_grad():
            h = e(target)

    def full_loss():
        hz = _mask((x - enc.mean) / enc.std, cfg.corruption, gen)
        for e in enc.encoders:
            hz = e(hz)
        for d in reversed(enc.decoders):
            hz = d(hz)
        return (hz - (x - enc.mean) / enc.std).pow(2).mean()

    _fit(enc.parameters(), full_loss, cfg.finetune_epochs, cfg.lr)
    for p in enc.parameters():
        p.requires_grad_(False)
    return enc, [enc.encode(r) for r in raws]


def geo_config_dict(cfg: GeoEncoderConfig):
    return asdict(cfg)
