import torch
import torch.nn as nn


class ResidualBlock(nn.Module):
    """conv3x3 -> BN -> ReLU -> conv3x3 -> BN, plus identity."""

    def __init__(self, channels):
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.BatchNorm2d(channels),
        )

    def forward(self, x):
        return x + self.body(x)


class SubPixelBlock(nn.Module):
    """conv3x3 (C_out * r^2) -> BN -> PixelShuffle(r) -> ReLU."""

    def __init__(self, in_channels, out_channels=None, factor=2):
        super().__init__()
        out_channels = in_channels if out_channels is None else out_channels
        self.factor = factor
        self.body = nn.Sequential(
            nn.Conv2d(in_channels, out_channels * factor * factor, 3, padding=1),
            nn.BatchNorm2d(out_channels * factor * factor),
            nn.PixelShuffle(factor),
            nn.ReLU(inplace=True),
        )

    def forward(self, x):
        return self.body(x)


def zero_residual_(block: ResidualBlock):
    """Zero every conv and BN affine weight so the block becomes the identity."""
    with torch.no_grad():
        for m in block.modules():
            if isinstance(m, (nn.Conv2d, nn.BatchNorm2d)):
                m.weight.zero_()
                m.bias.zero_()
    return block


def log2_int(n):
    k = int(n).bit_length() - 1
    if n < 1 or (1 << k) != n:
        raise ValueError(f"{n} is not a power of two")
    return k
