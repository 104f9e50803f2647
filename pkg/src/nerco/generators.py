"""Enhancement / degradation generators, the mask extractor, and the dual loop."""

from __future__ import annotations

from dataclasses import dataclass, fields

import torch
import torch.nn.functional as F
from torch import nn

from .errors import NumericFault
from .nrn import NrnModel


def init_weights(module):
    # N(0, 0.02) init for conv/linear layers, as in most image-to-image GANs.
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)


class ResidualBlock(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            nn.InstanceNorm2d(channels),
        )

    def forward(self, x):
        return x + self.block(x)


class GeneratorNet(nn.Module):
    """Residual image-to-image network with a tanh head.

    With the defaults the residual trunk runs at ``ngf * 4 = 128`` channels
    after two stride-2 downsampling stages.  Inputs whose sides are not a
    multiple of ``2 ** n_down`` are reflect-padded and cropped back.
    """

    def __init__(self, channels=3, ngf=32, n_down=2, n_blocks=6):
        super().__init__()
        self.n_down = n_down
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(channels, ngf, 7),
            nn.InstanceNorm2d(ngf),
            nn.ReLU(inplace=True),
        ]
        width = ngf
        for _ in range(n_down):
            layers += [
                nn.Conv2d(width, width * 2, 3, stride=2, padding=1),
                nn.InstanceNorm2d(width * 2),
                nn.ReLU(inplace=True),
            ]
            width *= 2
        layers += [ResidualBlock(width) for _ in range(n_blocks)]
        for _ in range(n_down):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(width, width // 2, 3, padding=1),
                nn.InstanceNorm2d(width // 2),
                nn.ReLU(inplace=True),
            ]
            width //= 2
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(width, channels, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)
        self.apply(init_weights)

    def forward(self, x):
        m = 2**self.n_down
        h, w = x.shape[-2:]
        ph, pw = -h % m, -w % m
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        y = self.model(x)
        return y[..., :h, :w]


class ChannelAttention(nn.Module):
    """Squeeze-excite gating: global pool -> 2-layer MLP -> sigmoid per channel."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        self.fc = nn.Sequential(
            nn.Linear(channels, channels // reduction),
            nn.ReLU(inplace=True),
            nn.Linear(channels // reduction, channels),
            nn.Sigmoid(),
        )

    def forward(self, x):
        gates = self.fc(x.mean(dim=(-2, -1)))
        return x * gates[..., None, None]


class CollaborativeAttention(nn.Module):
    """Channel gating followed by a single-channel sigmoid spatial map."""

    def __init__(self, channels, reduction=4):
        super().__init__()
        self.channel = ChannelAttention(channels, reduction)
        self.spatial = nn.Conv2d(channels, 1, 3, padding=1, padding_mode="replicate")

    def forward(self, x):
        return torch.sigmoid(self.spatial(self.channel(x)))


class MaskExtractor(nn.Module):
    """Shared conv trunk with an attention head (1 channel) and a lightness-mask head (3 channels)."""

    def __init__(self, width=64, depth=4, reduction=4):
        super().__init__()
        layers = []
        in_ch = 3
        for _ in range(depth):
            layers += [
                nn.Conv2d(in_ch, width, 3, padding=1, padding_mode="replicate"),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            in_ch = width
        self.trunk = nn.Sequential(*layers)
        self.cam = CollaborativeAttention(width, reduction)
        self.mask_head = nn.Conv2d(width, 3, 3, padding=1, padding_mode="replicate")
        self.apply(init_weights)

    def forward(self, x):
        feats = self.trunk(x)
        return self.cam(feats), torch.sigmoid(self.mask_head(feats))


def extract_masks(me: MaskExtractor, i_l: torch.Tensor):
    """Return ``(attention, lightness_mask)`` for a batch in model range."""
    return me(i_l)


def _apply_attention(img, i_a):
    if img.shape[-2:] != i_a.shape[-2:]:
        raise ValueError(
            f"attention map {tuple(i_a.shape[-2:])} does not match image {tuple(img.shape[-2:])}"
        )
    return img * i_a


def enhance(g_h: nn.Module, img: torch.Tensor, i_a: torch.Tensor) -> torch.Tensor:
    """``G_H`` applied to the attention-weighted image."""
    return g_h(_apply_attention(img, i_a))


def degrade(g_l: nn.Module, img: torch.Tensor, i_a: torch.Tensor) -> torch.Tensor:
    """``G_L`` applied to the attention-weighted image."""
    return g_l(_apply_attention(img, i_a))


@dataclass
class LoopOutputs:
    """Every intermediate of one pass through both loops.

    Naming: ``fake_*`` are single translations, ``cyc_*`` round trips,
    ``pseudo_*`` images built from the lightness mask of the low-light
    input, and ``fake_l_mask`` / ``recon_high`` their counterparts built
    from masks re-extracted on the degraded image.
    """

    i_a: torch.Tensor
    i_m: torch.Tensor
    i_nr: torch.Tensor
    fake_h: torch.Tensor
    cyc_l: torch.Tensor
    fake_l: torch.Tensor
    cyc_h: torch.Tensor
    pseudo_high: torch.Tensor
    pseudo_mask: torch.Tensor
    pseudo_low: torch.Tensor
    fake_l_mask: torch.Tensor
    recon_high: torch.Tensor

    @classmethod
    def names(cls):
        return tuple(f.name for f in fields(cls))

    def check_finite(self):
        for name in self.names():
            if not torch.isfinite(getattr(self, name)).all():
                raise NumericFault(name)


class EnhancementModels(nn.Module):
    """The generator-side networks: NRN, mask extractor, ``G_H`` and ``G_L``."""

    def __init__(self, nrn=None, me=None, g_h=None, g_l=None):
        super().__init__()
        self.nrn = nrn if nrn is not None else NrnModel()
        self.me = me if me is not None else MaskExtractor()
        self.g_h = g_h if g_h is not None else GeneratorNet()
        self.g_l = g_l if g_l is not None else GeneratorNet()

    def forward(self, i_l, i_h):
        return run_dual_loops(self, i_l, i_h)

    @torch.no_grad()
    def enhance_image(self, i_l):
        """Inference path: attention from ME, normalization by NRN, then ``G_H``."""
        i_a, _ = self.me(i_l)
        return enhance(self.g_h, self.nrn(i_l), i_a)


def run_dual_loops(models, i_l: torch.Tensor, i_h: torch.Tensor) -> LoopOutputs:
    """Run the enhance-degrade loop on ``i_l`` and the degrade-enhance loop on ``i_h``.

    The attention map from ``i_l`` gates both generators' inputs.  Only
    ``i_l`` passes through the NRN.
    """
    i_a, i_m = models.me(i_l)
    i_nr = models.nrn(i_l)
    fake_h = enhance(models.g_h, i_nr, i_a)
    cyc_l = models.g_l(fake_h)
    fake_l = degrade(models.g_l, i_h, i_a)
    cyc_h = models.g_h(fake_l)

    pseudo_high = (i_l + i_m).clamp(-1, 1)
    pseudo_mask = fake_h - i_l
    pseudo_low = (i_h - i_m).clamp(-1, 1)
    _, fake_l_mask = models.me(fake_l)
    recon_high = (fake_l + fake_l_mask).clamp(-1, 1)

    out = LoopOutputs(
        i_a=i_a,
        i_m=i_m,
        i_nr=i_nr,
        fake_h=fake_h,
        cyc_l=cyc_l,
        fake_l=fake_l,
        cyc_h=cyc_h,
        pseudo_high=pseudo_high,
        pseudo_mask=pseudo_mask,
        pseudo_low=pseudo_low,
        fake_l_mask=fake_l_mask,
        recon_high=recon_high,
    )
    out.check_finite()
    return out
