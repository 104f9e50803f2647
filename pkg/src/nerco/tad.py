"""Text-driven appearance discriminator.

Three supervision signals for a generated image: a color patch critic, an
edge patch critic that sees only the high-pass residual, and cosine
alignment between the image embedding and two prompt embeddings from a
frozen vision-language encoder pair.
"""

from __future__ import annotations

import contextlib
import hashlib
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, NumericFault
from .generators import init_weights
from .imaging import high_pass, to_luma

EMBED_DIM = 512
DEFAULT_LOW_PROMPT = "low-light image"
DEFAULT_HIGH_PROMPT = "high-light image"
DIRECTIONS = ("to_high", "to_low")

CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)


class StubBackend:
    """Deterministic stand-in for a vision-language encoder pair.

    Images are embedded by a fixed random projection of a few brightness
    statistics (mean luma, its square, luma variance, per-channel means and
    a constant); texts by a Gaussian vector seeded from the text's SHA-256.
    Everything is differentiable with respect to the image.
    """

    dim = EMBED_DIM
    n_stats = 7

    def __init__(self, seed: int = 0):
        self.seed = seed
        g = torch.Generator().manual_seed(seed)
        self.projection = torch.randn(self.n_stats, self.dim, generator=g, dtype=torch.float64)

    def image_stats(self, x: torch.Tensor) -> torch.Tensor:
        u = (x + 1) / 2
        y = to_luma(u)
        mean = y.mean(dim=(-3, -2, -1))
        var = ((y - mean[..., None, None, None]) ** 2).mean(dim=(-3, -2, -1))
        channel = u.mean(dim=(-2, -1))
        ones = torch.ones_like(mean)
        return torch.cat(
            [torch.stack((ones, mean, mean**2, var), dim=-1), channel], dim=-1
        )

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        stats = self.image_stats(x)
        return stats @ self.projection.to(stats.dtype)

    def encode_text(self, text: str) -> torch.Tensor:
        digest = hashlib.sha256(f"{self.seed}:{text}".encode()).digest()
        g = torch.Generator().manual_seed(int.from_bytes(digest[:8], "little"))
        return torch.randn(self.dim, generator=g, dtype=torch.float64)


class PretrainedBackend:
    """Frozen CLIP-style encoders loaded from a local ``transformers`` directory."""

    def __init__(self, path, device="cpu"):
        path = Path(path)
        if not path.is_dir():
            raise ConfigurationError(f"vision-language weights not found at {path}")
        from transformers import CLIPModel, CLIPTokenizer

        self.model = CLIPModel.from_pretrained(path).to(device).eval()
        self.model.requires_grad_(False)
        self.tokenizer = CLIPTokenizer.from_pretrained(path)
        self.image_size = self.model.config.vision_config.image_size
        self.dim = self.model.config.projection_dim
        self.device = device

    def encode_image(self, x: torch.Tensor) -> torch.Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.unsqueeze(0)
        u = ((x + 1) / 2).to(self.device, torch.float32)
        u = F.interpolate(
            u, size=(self.image_size, self.image_size), mode="bicubic", antialias=True, align_corners=False
        )
        mean = torch.tensor(CLIP_MEAN, device=u.device).view(1, 3, 1, 1)
        std = torch.tensor(CLIP_STD, device=u.device).view(1, 3, 1, 1)
        feats = _as_tensor(self.model.get_image_features(pixel_values=(u - mean) / std))
        feats = feats.to(x.dtype)
        return feats[0] if squeeze else feats

    @torch.no_grad()
    def encode_text(self, text: str) -> torch.Tensor:
        tokens = self.tokenizer([text], padding=True, return_tensors="pt").to(self.device)
        return _as_tensor(self.model.get_text_features(**tokens))[0].to(torch.float64).cpu()


def _as_tensor(out):
    # Some transformers versions wrap projected features in an output object.
    if isinstance(out, torch.Tensor):
        return out
    for attr in ("pooler_output", "image_embeds", "text_embeds"):
        value = getattr(out, attr, None)
        if value is not None:
            return value
    raise TypeError(f"unexpected encoder output {type(out).__name__}")


def backend_from_spec(spec: str):
    """Build a backend from ``"stub:<seed>"`` or ``"pretrained:<path>"``."""
    kind, _, arg = spec.partition(":")
    if kind == "stub":
        return StubBackend(int(arg or 0))
    if kind == "pretrained":
        return PretrainedBackend(arg)
    raise ConfigurationError(f"unknown vision-language backend {spec!r}")


@dataclass(frozen=True)
class PromptPair:
    t_low: str
    t_high: str
    emb_low: torch.Tensor
    emb_high: torch.Tensor

    def __post_init__(self):
        for name in ("emb_low", "emb_high"):
            norm = float(getattr(self, name).norm())
            if abs(norm - 1.0) > 1e-6:
                raise ValueError(f"{name} must have unit norm, got {norm}")

    @classmethod
    def build(cls, backend, t_low=DEFAULT_LOW_PROMPT, t_high=DEFAULT_HIGH_PROMPT):
        emb_low = _unit(backend.encode_text(t_low), "emb_low")
        emb_high = _unit(backend.encode_text(t_high), "emb_high")
        return cls(t_low, t_high, emb_low, emb_high)

    def swapped(self):
        return PromptPair(self.t_high, self.t_low, self.emb_high, self.emb_low)


def _unit(v: torch.Tensor, name: str) -> torch.Tensor:
    v = v.detach().to(torch.float64)
    norm = v.norm()
    if not torch.isfinite(norm) or norm == 0:
        raise NumericFault(name, f"{name} has zero or non-finite norm")
    return v / norm


def cosine_similarity(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity along the last dim; zero-norm inputs are a numeric fault."""
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    if (na == 0).any() or (nb == 0).any():
        raise NumericFault("embedding", "cosine similarity of a zero-norm embedding")
    return (a * b).sum(dim=-1) / (na * nb)


def cosine_discrepancy(img: torch.Tensor, emb_text: torch.Tensor, backend) -> torch.Tensor:
    """Cosine similarity of the image embedding with a text embedding (one value per image)."""
    emb_img = backend.encode_image(img)
    return cosine_similarity(emb_img, emb_text.to(emb_img.dtype))


def cosine_loss_high(img, prompts: PromptPair, backend) -> torch.Tensor:
    """Low for images that embed near the high-light prompt; in ``[-2, 2]``."""
    emb = backend.encode_image(img)
    low = cosine_similarity(emb, prompts.emb_low.to(emb.dtype))
    high = cosine_similarity(emb, prompts.emb_high.to(emb.dtype))
    return (low - high).mean()


def cosine_loss_low(img, prompts: PromptPair, backend) -> torch.Tensor:
    """Mirror of :func:`cosine_loss_high` for low-light predictions."""
    emb = backend.encode_image(img)
    low = cosine_similarity(emb, prompts.emb_low.to(emb.dtype))
    high = cosine_similarity(emb, prompts.emb_high.to(emb.dtype))
    return (high - low).mean()


def patch_critic(in_ch=3, ndf=64, n_layers=3) -> nn.Sequential:
    """PatchGAN critic; ``n_layers=3`` gives 5 convs and a 70x70 receptive field.

    ``n_layers=0`` builds a per-pixel critic (1x1 convs), usable on tiny inputs.
    """
    if n_layers == 0:
        layers = [
            nn.Conv2d(in_ch, ndf, 1),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf, ndf * 2, 1),
            nn.LeakyReLU(0.2, True),
            nn.Conv2d(ndf * 2, 1, 1),
        ]
        return nn.Sequential(*layers)
    layers = [nn.Conv2d(in_ch, ndf, 4, stride=2, padding=1), nn.LeakyReLU(0.2, True)]
    mult = 1
    for n in range(1, n_layers):
        prev, mult = mult, min(2**n, 8)
        layers += [
            nn.Conv2d(ndf * prev, ndf * mult, 4, stride=2, padding=1),
            nn.InstanceNorm2d(ndf * mult),
            nn.LeakyReLU(0.2, True),
        ]
    prev, mult = mult, min(2**n_layers, 8)
    layers += [
        nn.Conv2d(ndf * prev, ndf * mult, 4, stride=1, padding=1),
        nn.InstanceNorm2d(ndf * mult),
        nn.LeakyReLU(0.2, True),
        nn.Conv2d(ndf * mult, 1, 4, stride=1, padding=1),
    ]
    return nn.Sequential(*layers)


class AppearanceDiscriminator(nn.Module):
    """Color path on the image, edge path on its high-pass residual. Outputs logits."""

    def __init__(self, channels=3, ndf=64, n_layers=3):
        super().__init__()
        self.color = patch_critic(channels, ndf, n_layers)
        self.edge = patch_critic(channels, ndf, n_layers)
        self.apply(init_weights)

    def forward(self, img):
        return self.color(img), self.edge(high_pass(img))


def discriminate(d: AppearanceDiscriminator, img: torch.Tensor):
    return d(img)


@contextlib.contextmanager
def frozen(*modules):
    """Temporarily stop gradient tracking for the modules' parameters."""
    params = [p for m in modules for p in m.parameters()]
    saved = [p.requires_grad for p in params]
    for p in params:
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(params, saved):
            p.requires_grad_(flag)


def bce_logits(logits: torch.Tensor, target: float, name="logits") -> torch.Tensor:
    if torch.isnan(logits).any():
        raise NumericFault(name)
    return F.binary_cross_entropy_with_logits(logits, torch.full_like(logits, target))


def realism_loss(d, img, name="fake") -> torch.Tensor:
    """Non-saturating generator term: both paths should call ``img`` real.

    ``d`` is frozen so the gradient only reaches ``img``.
    """
    with frozen(d):
        color, edge = d(img)
    return 0.5 * (bce_logits(color, 1.0, name) + bce_logits(edge, 1.0, name))


def rejection_loss(d, img, name="fake") -> torch.Tensor:
    """Discriminator term pushing both paths to call ``img`` fake (input detached)."""
    color, edge = d(img.detach())
    return 0.5 * (bce_logits(color, 0.0, name) + bce_logits(edge, 0.0, name))


def acceptance_loss(d, img, name="real") -> torch.Tensor:
    color, edge = d(img)
    return 0.5 * (bce_logits(color, 1.0, name) + bce_logits(edge, 1.0, name))


def adversarial_generator_loss(fake, d, prompts: PromptPair, backend, direction="to_high"):
    """Generator half: non-saturating fake->1 on both paths plus the matching cosine loss."""
    if direction not in DIRECTIONS:
        raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
    text = cosine_loss_high if direction == "to_high" else cosine_loss_low
    return realism_loss(d, fake) + text(fake, prompts, backend)


def adversarial_discriminator_loss(real, fake, d):
    """Discriminator half: real->1 and detached fake->0, averaged over both paths."""
    return 0.5 * (acceptance_loss(d, real) + rejection_loss(d, fake))


def adversarial_loss(real, fake, d, prompts: PromptPair, backend, direction="to_high"):
    """Return ``(loss_g, loss_d)`` for one translation direction."""
    loss_g = adversarial_generator_loss(fake, d, prompts, backend, direction)
    loss_d = adversarial_discriminator_loss(real, fake, d)
    return loss_g, loss_d
