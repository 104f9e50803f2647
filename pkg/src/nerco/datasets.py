"""Unpaired training corpora and evaluation image iteration.

Training layout::

    <root>/low/*.png|jpg    low-light images
    <root>/high/*.png|jpg   reference-style images (no pixel correspondence)

Evaluation directories are flat.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

import numpy as np
import torch
import torch.nn.functional as F

from .errors import DataError
from .imaging import ImageTensor, load_image, pad_to_multiple, to_model_range, MODEL_RANGE

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}
MIN_SIDE = 8


def list_images(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"no such directory: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


@dataclass
class UnpairedCorpus:
    low_dir: Path
    high_dir: Path
    patch_size: int = 256
    flip: bool = True
    low: list[Path] = field(init=False)
    high: list[Path] = field(init=False)

    def __post_init__(self):
        self.low_dir, self.high_dir = Path(self.low_dir), Path(self.high_dir)
        self.low = list_images(self.low_dir)
        self.high = list_images(self.high_dir)
        if not self.low:
            raise DataError(f"no images in {self.low_dir}")
        if not self.high:
            raise DataError(f"no images in {self.high_dir}")
        self._cache: dict[Path, ImageTensor] = {}

    @classmethod
    def from_root(cls, root, **kwargs):
        root = Path(root)
        return cls(root / "low", root / "high", **kwargs)

    @property
    def epoch_length(self) -> int:
        return max(len(self.low), len(self.high))

    def load(self, path: Path) -> ImageTensor:
        if path not in self._cache:
            self._cache[path] = load_image(path)
        return self._cache[path]


def random_crop_box(h: int, w: int, size: int, rng: np.random.Generator):
    """Top-left ``(y, x)`` of a ``size`` x ``size`` window inside an ``h`` x ``w`` image."""
    if h < size or w < size:
        raise ValueError(f"cannot crop {size}px from {h}x{w}")
    return int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))


def _resize_min_side(x: torch.Tensor, size: int) -> torch.Tensor:
    h, w = x.shape[-2:]
    scale = size / min(h, w)
    new = (max(size, round(h * scale)), max(size, round(w * scale)))
    return F.interpolate(x[None], size=new, mode="bilinear", align_corners=False)[0]


def make_patch(img: ImageTensor, size: int, rng: np.random.Generator, flip=True) -> ImageTensor:
    """Random ``size`` crop (upscaling first if a side is short), optional h-flip, model range."""
    if img.height < MIN_SIDE or img.width < MIN_SIDE:
        raise DataError(f"image {img.height}x{img.width} is smaller than {MIN_SIDE}x{MIN_SIDE}")
    x = img.data
    if min(img.height, img.width) < size:
        x = _resize_min_side(x, size).clamp(0, 1)
    y0, x0 = random_crop_box(x.shape[-2], x.shape[-1], size, rng)
    x = x[:, y0 : y0 + size, x0 : x0 + size]
    if flip and rng.random() < 0.5:
        x = x.flip(-1)
    return to_model_range(ImageTensor(x.contiguous(), img.value_range, img.color_space))


def sample_training_pair(corpus: UnpairedCorpus, rng_seed: int):
    """Draw one low and one high patch with independent indices; deterministic in the seed."""
    rng = np.random.default_rng(rng_seed)
    li = int(rng.integers(len(corpus.low)))
    hi = int(rng.integers(len(corpus.high)))
    low = make_patch(corpus.load(corpus.low[li]), corpus.patch_size, rng, corpus.flip)
    high = make_patch(corpus.load(corpus.high[hi]), corpus.patch_size, rng, corpus.flip)
    return low, high


def epoch_pairs(corpus: UnpairedCorpus, epoch: int, seed: int = 0):
    """One epoch of ``(low, high)`` patches.

    The epoch visits every image of the larger pool once; the smaller pool
    wraps around.  The two pools are shuffled with independent orders.
    """
    rng = np.random.default_rng([seed, epoch])
    low_order = rng.permutation(len(corpus.low))
    high_order = rng.permutation(len(corpus.high))
    for i in range(corpus.epoch_length):
        item_rng = np.random.default_rng([seed, epoch, i])
        low = corpus.load(corpus.low[low_order[i % len(low_order)]])
        high = corpus.load(corpus.high[high_order[i % len(high_order)]])
        yield (
            make_patch(low, corpus.patch_size, item_rng, corpus.flip),
            make_patch(high, corpus.patch_size, item_rng, corpus.flip),
        )


class EvalItem(NamedTuple):
    name: str
    image: ImageTensor
    pad: tuple[int, int]


def iterate_eval(directory, multiple: int = 4) -> Iterator[EvalItem]:
    """Full-resolution images in name order, model range, reflect-padded to ``multiple``.

    ``pad`` holds the rows/columns added at the bottom/right.
    """
    paths = list_images(directory)
    if not paths:
        raise DataError(f"no images in {directory}")
    return _eval_items(paths, multiple)


def _eval_items(paths, multiple):
    for path in paths:
        img = to_model_range(load_image(path))
        data, pad = pad_to_multiple(img.data, multiple)
        yield EvalItem(path.name, ImageTensor(data, MODEL_RANGE, img.color_space), pad)
