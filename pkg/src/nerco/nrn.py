"""Neural representation normalization.

An image is re-rendered by a coordinate MLP: every pixel's RGB value is
decoded from a pixel-aligned feature vector plus a sinusoidal encoding of
the pixel position.  The number of encoding frequencies caps how much
high-frequency detail the MLP can reproduce, which is what lets the module
iron out per-image brightness and noise instead of copying them.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

DEFAULT_PE_LEVELS = 8
MAX_PE_LEVELS = 16


def make_grid(h: int, w: int, dtype=torch.float64, device=None) -> torch.Tensor:
    """Pixel-center coordinates in ``[-1, 1]``, shape ``(h, w, 2)`` ordered ``(x, y)``."""
    if h < 2 or w < 2:
        raise ValueError(f"grid needs h, w >= 2, got ({h}, {w})")
    ys = torch.linspace(-1.0, 1.0, h, dtype=dtype, device=device)
    xs = torch.linspace(-1.0, 1.0, w, dtype=dtype, device=device)
    gy, gx = torch.meshgrid(ys, xs, indexing="ij")
    return torch.stack((gx, gy), dim=-1)


def positional_encode(grid: torch.Tensor, levels: int = DEFAULT_PE_LEVELS) -> torch.Tensor:
    """Map each scalar coordinate to ``[sin(2^0 pi x), cos(2^0 pi x), ...]``.

    ``grid`` has shape ``(..., D)``; the result has shape ``(..., 2 * levels * D)``
    with the ``2 * levels`` features of each coordinate kept contiguous.
    """
    if not 1 <= levels <= MAX_PE_LEVELS:
        raise ValueError(f"levels must be in [1, {MAX_PE_LEVELS}], got {levels}")
    freqs = torch.tensor(
        [2.0**i * math.pi for i in range(levels)], dtype=grid.dtype, device=grid.device
    )
    angles = grid.unsqueeze(-1) * freqs  # (..., D, L)
    enc = torch.stack((torch.sin(angles), torch.cos(angles)), dim=-1)  # (..., D, L, 2)
    return enc.flatten(-3)


class NrnModel(nn.Module):
    """Feature encoder plus coordinate MLP decoder.

    The encoder sees an instance-normalized copy of the input, so a global
    gain or offset change does not reach the features; it is then smoothed
    with a ``feature_pool``-sized box filter so fine detail has to come from
    the coordinate encoding.
    """

    def __init__(
        self,
        pe_levels: int = DEFAULT_PE_LEVELS,
        feat_channels: int = 64,
        hidden: int = 256,
        hidden_layers: int = 3,
        feature_pool: int = 8,
    ):
        super().__init__()
        if not 1 <= pe_levels <= MAX_PE_LEVELS:
            raise ValueError(f"pe_levels must be in [1, {MAX_PE_LEVELS}], got {pe_levels}")
        self.pe_levels = pe_levels
        self.feature_pool = feature_pool
        self.encoder = nn.Sequential(
            nn.Conv2d(3, feat_channels, 3, padding=1, padding_mode="replicate"),
            nn.LeakyReLU(0.2),
            nn.Conv2d(feat_channels, feat_channels, 3, padding=1, padding_mode="replicate"),
            nn.LeakyReLU(0.2),
            nn.Conv2d(feat_channels, feat_channels, 3, padding=1, padding_mode="replicate"),
        )
        layers = []
        width = feat_channels + 4 * pe_levels
        for _ in range(hidden_layers):
            layers += [nn.Linear(width, hidden), nn.ReLU()]
            width = hidden
        layers += [nn.Linear(width, 3), nn.Tanh()]
        self.decoder = nn.Sequential(*layers)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        mean = x.mean(dim=(-2, -1), keepdim=True)
        std = x.std(dim=(-2, -1), keepdim=True)
        e = self.encoder((x - mean) / (std + 1e-3))
        if self.feature_pool > 1:
            k = self.feature_pool
            left, right = (k - 1) // 2, k // 2
            e = F.avg_pool2d(F.pad(e, (left, right, left, right), mode="replicate"), k, stride=1)
        return e

    def forward(self, x: torch.Tensor, levels: int | None = None) -> torch.Tensor:
        levels = self.pe_levels if levels is None else levels
        if levels != self.pe_levels:
            raise ValueError(f"model was built for {self.pe_levels} levels, got {levels}")
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        n, _, h, w = x.shape
        e = self.features(x).permute(0, 2, 3, 1)  # (N, H, W, C)
        grid = make_grid(h, w, dtype=x.dtype, device=x.device)
        pe = positional_encode(grid, levels)
        if e.shape[1:3] != pe.shape[:2]:
            raise RuntimeError(f"feature map {tuple(e.shape[1:3])} does not match grid {tuple(pe.shape[:2])}")
        z = torch.cat((e, pe.expand(n, -1, -1, -1)), dim=-1)
        out = self.decoder(z).permute(0, 3, 1, 2)
        return out[0] if squeeze else out


def nrn_forward(model: NrnModel, img: torch.Tensor, levels: int | None = None) -> torch.Tensor:
    return model(img, levels)


def nrn_loss(i_nr: torch.Tensor, i_l: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference between the rendered and the input image."""
    if i_nr.shape != i_l.shape:
        raise ValueError(f"shape mismatch {tuple(i_nr.shape)} vs {tuple(i_l.shape)}")
    return (i_nr - i_l).abs().mean()
