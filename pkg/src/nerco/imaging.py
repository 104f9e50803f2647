"""Image container, range conversion, luma, filtering and file IO.

Files and metrics work in ``[0, 1]``; the networks work in ``[-1, 1]``.
Moving between the two is always an explicit call to :func:`to_model_range`
or :func:`to_unit_range`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image, UnidentifiedImageError

from .errors import ImageFormatError

UNIT_RANGE = (0.0, 1.0)
MODEL_RANGE = (-1.0, 1.0)

# BT.601 luma weights.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)

BLUR_SIGMA = 2.0
BLUR_SIZE = 9


@dataclass(frozen=True)
class ImageTensor:
    """A ``(C, H, W)`` float tensor tagged with its value range and color space."""

    data: torch.Tensor
    value_range: tuple[float, float] = UNIT_RANGE
    color_space: str = "RGB"

    def __post_init__(self):
        if self.value_range not in (UNIT_RANGE, MODEL_RANGE):
            raise ValueError(f"unsupported value range {self.value_range}")
        if self.color_space not in ("RGB", "Y"):
            raise ValueError(f"unsupported color space {self.color_space!r}")
        if self.data.ndim != 3:
            raise ValueError(f"expected (C, H, W) data, got shape {tuple(self.data.shape)}")
        expected_c = 3 if self.color_space == "RGB" else 1
        if self.data.shape[0] != expected_c:
            raise ValueError(
                f"{self.color_space} image needs {expected_c} channels, got {self.data.shape[0]}"
            )
        lo, hi = self.value_range
        if self.data.numel() and (self.data.min() < lo or self.data.max() > hi):
            raise ValueError(
                f"values [{float(self.data.min()):.4f}, {float(self.data.max()):.4f}] "
                f"leave declared range {self.value_range}; clamp explicitly first"
            )

    @property
    def shape(self):
        return tuple(self.data.shape)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]


def clamp(img: ImageTensor | torch.Tensor, value_range=MODEL_RANGE):
    """Clamp to a range. ImageTensor inputs keep their own declared range."""
    if isinstance(img, ImageTensor):
        lo, hi = img.value_range
        return ImageTensor(img.data.clamp(lo, hi), img.value_range, img.color_space)
    return img.clamp(*value_range)


def to_model_range(img: ImageTensor) -> ImageTensor:
    if img.value_range == MODEL_RANGE:
        return img
    return ImageTensor(img.data * 2 - 1, MODEL_RANGE, img.color_space)


def to_unit_range(img: ImageTensor) -> ImageTensor:
    if img.value_range == UNIT_RANGE:
        return img
    # (x + 1) / 2 can round a hair outside [0, 1] only for inputs outside [-1, 1].
    return ImageTensor((img.data + 1) / 2, UNIT_RANGE, img.color_space)


def load_image(path) -> ImageTensor:
    """Read an 8-bit image file as an RGB tensor in ``[0, 1]``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageFormatError(f"cannot decode {path}: {exc}") from exc
    data = torch.from_numpy(arr.copy()).permute(2, 0, 1).to(torch.float32) / 255.0
    return ImageTensor(data, UNIT_RANGE, "RGB")


def save_image(img: ImageTensor, path) -> None:
    """Write ``img`` (range ``[0, 1]``) as an 8-bit file; format follows the suffix."""
    if img.value_range != UNIT_RANGE:
        raise ValueError("save_image expects a [0, 1] image; call to_unit_range first")
    arr = (img.data.detach().cpu().to(torch.float64) * 255.0).round().clamp(0, 255)
    arr = arr.to(torch.uint8).permute(1, 2, 0).numpy()
    mode = "RGB"
    if arr.shape[2] == 1:
        arr, mode = arr[..., 0], "L"
    Image.fromarray(arr, mode=mode).save(Path(path))


def to_luma(img):
    """BT.601 luma of an RGB image.

    Accepts an :class:`ImageTensor` (returns a ``Y`` ImageTensor with the same
    range) or a raw tensor with channels at dim ``-3`` (returns a raw tensor
    with a single channel).
    """
    if isinstance(img, ImageTensor):
        if img.color_space != "RGB":
            raise TypeError("to_luma needs an RGB image")
        y = _luma(img.data)
        lo, hi = img.value_range
        # Weights sum to 1, so only rounding can push y past the bounds.
        return ImageTensor(y.clamp(lo, hi), img.value_range, "Y")
    if img.shape[-3] != 3:
        raise TypeError(f"to_luma needs 3 channels, got {img.shape[-3]}")
    return _luma(img)


def _luma(x: torch.Tensor) -> torch.Tensor:
    r, g, b = x.unbind(dim=-3)
    wr, wg, wb = LUMA_WEIGHTS
    return (wr * r + wg * g + wb * b).unsqueeze(-3)


def gaussian_kernel1d(size=BLUR_SIZE, sigma=BLUR_SIGMA, dtype=torch.float32):
    half = (size - 1) / 2
    x = torch.arange(size, dtype=torch.float64) - half
    k = torch.exp(-(x**2) / (2 * sigma**2))
    return (k / k.sum()).to(dtype)


def gaussian_blur(x: torch.Tensor, size=BLUR_SIZE, sigma=BLUR_SIGMA) -> torch.Tensor:
    """Separable Gaussian blur with replicate padding over the last two dims."""
    squeeze = x.ndim == 3
    if squeeze:
        x = x.unsqueeze(0)
    n, c, h, w = x.shape
    k = gaussian_kernel1d(size, sigma, x.dtype).to(x.device)
    pad = size // 2
    y = F.pad(x, (pad, pad, pad, pad), mode="replicate")
    y = y.reshape(n * c, 1, h + 2 * pad, w + 2 * pad)
    y = F.conv2d(y, k.view(1, 1, 1, size))
    y = F.conv2d(y, k.view(1, 1, size, 1))
    y = y.reshape(n, c, h, w)
    return y[0] if squeeze else y


def high_pass(img) -> torch.Tensor:
    """Identity minus a 9x9, sigma=2 Gaussian blur. Returns an untagged tensor."""
    x = img.data if isinstance(img, ImageTensor) else img
    return x - gaussian_blur(x)


def pad_to_multiple(x: torch.Tensor, multiple=4):
    """Reflect-pad the bottom/right of ``(..., H, W)`` up to a multiple.

    Returns the padded tensor and ``(pad_h, pad_w)`` for :func:`crop_padding`.
    """
    h, w = x.shape[-2:]
    pad_h = -h % multiple
    pad_w = -w % multiple
    if pad_h or pad_w:
        squeeze = x.ndim == 3
        y = x.unsqueeze(0) if squeeze else x
        mode = "reflect" if pad_h < h and pad_w < w else "replicate"
        y = F.pad(y, (0, pad_w, 0, pad_h), mode=mode)
        x = y[0] if squeeze else y
    return x, (pad_h, pad_w)


def crop_padding(x: torch.Tensor, pad) -> torch.Tensor:
    pad_h, pad_w = pad
    h, w = x.shape[-2:]
    return x[..., : h - pad_h, : w - pad_w]

