"""Image quality metrics: PSNR, SSIM, LOE, NIQE and the prompt-based semantic score.

All image inputs are in ``[0, 1]``; they may be :class:`ImageTensor`,
``(C, H, W)`` tensors or ``(H, W[, C])`` arrays with channels last.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import torch
from scipy import ndimage
from scipy.special import gamma

from .errors import ConfigurationError
from .imaging import LUMA_WEIGHTS, ImageTensor
from .tad import cosine_discrepancy

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
LOE_SIDE = 50
LOE_SCALE = 1000.0
NIQE_BLOCK = 96
SEMANTIC_TAU = 100.0


def _hwc(img) -> np.ndarray:
    """Float64 ``(H, W, C)`` array."""
    if isinstance(img, ImageTensor):
        img = img.data
    if isinstance(img, torch.Tensor):
        arr = img.detach().cpu().to(torch.float64).numpy()
        if arr.ndim == 3:
            arr = arr.transpose(1, 2, 0)
    else:
        arr = np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[..., None]
    return arr


def _gray(img) -> np.ndarray:
    arr = _hwc(img)
    if arr.shape[-1] == 1:
        return arr[..., 0]
    return arr @ np.asarray(LUMA_WEIGHTS)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for ``[0, 1]`` images; ``inf`` when identical."""
    a, b = _hwc(a), _hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    return math.inf if mse == 0 else 10.0 * math.log10(1.0 / mse)


def _gauss_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size) - (size - 1) / 2
    w = np.exp(-(x**2) / (2 * sigma**2))
    return w / w.sum()


def _filter_valid(x, w):
    y = ndimage.correlate1d(x, w, axis=0, mode="nearest")
    y = ndimage.correlate1d(y, w, axis=1, mode="nearest")
    r = len(w) // 2
    return y[r:-r, r:-r]


def ssim_map(a, b) -> np.ndarray:
    """Local SSIM on luma with an 11x11, sigma=1.5 Gaussian window (valid region only)."""
    x, y = _gray(a), _gray(b)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch {x.shape} vs {y.shape}")
    if min(x.shape) < SSIM_WINDOW:
        raise ValueError(f"image {x.shape} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = _gauss_window()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    mu_x, mu_y = _filter_valid(x, w), _filter_valid(y, w)
    var_x = _filter_valid(x * x, w) - mu_x * mu_x
    var_y = _filter_valid(y * y, w) - mu_y * mu_y
    cov = _filter_valid(x * y, w) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim(a, b) -> float:
    return float(ssim_map(a, b).mean())


def lightness(img) -> np.ndarray:
    """Per-pixel maximum over color channels."""
    return _hwc(img).max(axis=-1)


def _nearest_resize(x: np.ndarray, side=LOE_SIDE) -> np.ndarray:
    """Nearest-neighbour resize so the shorter side equals ``side``.

    Nearest sampling commutes with any per-pixel tone curve, which keeps LOE
    at exactly zero for monotone remappings.
    """
    h, w = x.shape
    r = side / min(h, w)
    nh, nw = max(1, round(h * r)), max(1, round(w * r))
    rows = np.minimum(((np.arange(nh) + 0.5) / r).astype(int), h - 1)
    cols = np.minimum(((np.arange(nw) + 0.5) / r).astype(int), w - 1)
    return x[np.ix_(rows, cols)]


def loe_from_lightness(enhanced: np.ndarray, original: np.ndarray, chunk=1024) -> float:
    """Mean fraction of other pixels whose ``>=`` relation flips, times 1000."""
    e = np.asarray(enhanced, dtype=np.float64).ravel()
    o = np.asarray(original, dtype=np.float64).ravel()
    if e.shape != o.shape:
        raise ValueError(f"shape mismatch {enhanced.shape} vs {original.shape}")
    m = e.size
    if m < 2:
        return 0.0
    flips = 0
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        uo = o[start:stop, None] >= o[None, :]
        ue = e[start:stop, None] >= e[None, :]
        flips += int(np.count_nonzero(uo != ue))
    return LOE_SCALE * flips / (m * (m - 1))


def loe(enhanced, original) -> float:
    """Lightness order error between an enhanced image and its input.

    Lightness is the channel maximum; images whose shorter side exceeds 50
    pixels are nearest-resampled to a shorter side of 50 first.
    """
    le, lo = lightness(enhanced), lightness(original)
    if le.shape != lo.shape:
        raise ValueError(f"shape mismatch {le.shape} vs {lo.shape}")
    if min(lo.shape) > LOE_SIDE:
        le, lo = _nearest_resize(le), _nearest_resize(lo)
    return loe_from_lightness(le, lo)


# --- NIQE -------------------------------------------------------------------


@dataclass
class NiqeModel:
    """Pristine multivariate Gaussian over 36 NSS features, plus the 7x7 MSCN window."""

    mu: np.ndarray
    cov: np.ndarray
    window: np.ndarray

    @classmethod
    def load(cls, path=None) -> "NiqeModel":
        if path is None:
            ref = resources.files("nerco") / "data" / "niqe_pris_params.npz"
            with resources.as_file(ref) as p:
                return cls.load(p)
        path = Path(path)
        if not path.is_file():
            raise ConfigurationError(f"NIQE model file not found: {path}")
        with np.load(path) as params:
            return cls(
                mu=np.ravel(params["mu_pris_param"]).astype(np.float64),
                cov=np.asarray(params["cov_pris_param"], dtype=np.float64),
                window=np.asarray(params["gaussian_window"], dtype=np.float64),
            )


_AGGD_GAMMAS = np.arange(0.2, 10.001, 0.001)
_AGGD_RATIO = gamma(2 / _AGGD_GAMMAS) ** 2 / (gamma(1 / _AGGD_GAMMAS) * gamma(3 / _AGGD_GAMMAS))


def aggd_fit(x: np.ndarray):
    """Moment-matching fit of an asymmetric generalized Gaussian: ``(alpha, beta_l, beta_r)``."""
    x = x.ravel()
    left = np.sqrt(np.mean(x[x < 0] ** 2))
    right = np.sqrt(np.mean(x[x > 0] ** 2))
    g = left / right
    r = np.mean(np.abs(x)) ** 2 / np.mean(x**2)
    r_norm = r * (g**3 + 1) * (g + 1) / (g**2 + 1) ** 2
    alpha = _AGGD_GAMMAS[np.argmin((_AGGD_RATIO - r_norm) ** 2)]
    scale = np.sqrt(gamma(1 / alpha) / gamma(3 / alpha))
    return alpha, left * scale, right * scale


def _block_features(block: np.ndarray) -> list[float]:
    alpha, bl, br = aggd_fit(block)
    feats = [alpha, (bl + br) / 2]
    for shift in ((0, 1), (1, 0), (1, 1), (1, -1)):
        prod = block * np.roll(block, shift, axis=(0, 1))
        alpha, bl, br = aggd_fit(prod)
        mean = (br - bl) * gamma(2 / alpha) / gamma(1 / alpha)
        feats += [alpha, mean, bl, br]
    return feats


def _cubic(x):
    ax = np.abs(x)
    return np.where(
        ax <= 1,
        1.5 * ax**3 - 2.5 * ax**2 + 1,
        np.where(ax <= 2, -0.5 * ax**3 + 2.5 * ax**2 - 4 * ax + 2, 0.0),
    )


def _resize_weights(in_len, scale):
    # MATLAB imresize bicubic with antialiasing, symmetric border handling.
    out_len = int(math.ceil(in_len * scale))
    width = 4.0 / scale if scale < 1 else 4.0
    u = np.arange(1, out_len + 1) / scale + 0.5 * (1 - 1 / scale)
    left = np.floor(u - width / 2)
    taps = int(math.ceil(width)) + 2
    idx = left[:, None] + np.arange(taps)[None, :]
    dist = u[:, None] - idx
    w = scale * _cubic(scale * dist) if scale < 1 else _cubic(dist)
    w /= w.sum(axis=1, keepdims=True)
    idx = idx.astype(int) - 1
    period = 2 * in_len
    idx = np.mod(idx, period)
    idx = np.where(idx >= in_len, period - 1 - idx, idx)
    return w, idx


def imresize(x: np.ndarray, scale: float) -> np.ndarray:
    """Bicubic resize of a 2-D array, matching MATLAB's ``imresize`` defaults."""
    for axis in (0, 1):
        w, idx = _resize_weights(x.shape[axis], scale)
        moved = np.moveaxis(x, axis, 0)
        moved = np.einsum("ot,ot...->o...", w, moved[idx])
        x = np.moveaxis(moved, 0, axis)
    return x


def niqe_features(gray255: np.ndarray, window: np.ndarray, block=NIQE_BLOCK) -> np.ndarray:
    """36 features per ``block`` x ``block`` tile: 18 at full scale, 18 at half scale."""
    h, w = gray255.shape
    nh, nw = h // block, w // block
    img = gray255[: nh * block, : nw * block]
    per_scale = []
    for scale in (1, 2):
        mu = ndimage.convolve(img, window, mode="nearest")
        sigma = np.sqrt(np.abs(ndimage.convolve(img * img, window, mode="nearest") - mu * mu))
        mscn = (img - mu) / (sigma + 1)
        b = block // scale
        feats = [
            _block_features(mscn[i * b : (i + 1) * b, j * b : (j + 1) * b])
            for j in range(nw)
            for i in range(nh)
        ]
        per_scale.append(np.asarray(feats))
        if scale == 1:
            img = imresize(img / 255.0, 0.5) * 255.0
    return np.concatenate(per_scale, axis=1)


def niqe_distance(mu: np.ndarray, cov: np.ndarray, model: NiqeModel) -> float:
    """Distance between an image's feature Gaussian and the pristine one."""
    diff = model.mu - mu
    inv = np.linalg.pinv((model.cov + cov) / 2)
    return float(np.sqrt(max(diff @ inv @ diff, 0.0)))


def niqe(img, model: NiqeModel | None = None) -> float:
    """Natural image quality evaluator score (lower is better); image at least 96x96."""
    model = model or NiqeModel.load()
    gray = np.round(_gray(img) * 255.0)
    if min(gray.shape) < NIQE_BLOCK:
        raise ValueError(f"NIQE needs at least {NIQE_BLOCK}x{NIQE_BLOCK}, got {gray.shape}")
    feats = niqe_features(gray, model.window)
    mu = np.nanmean(feats, axis=0)
    clean = feats[~np.isnan(feats).any(axis=1)]
    cov = np.cov(clean, rowvar=False) if len(clean) > 1 else np.zeros_like(model.cov)
    return niqe_distance(mu, cov, model)


# --- semantic score -----------------------------------------------------------


def semantic_score(img, prompts, backend, tau=SEMANTIC_TAU):
    """Probability of the high-light prompt under a softmax over scaled cosine similarities.

    ``img`` is in model range ``[-1, 1]``.  Returns a float for a single
    image or a tensor for a batch.
    """
    x = img.data if isinstance(img, ImageTensor) else img
    with torch.no_grad():
        high = cosine_discrepancy(x, prompts.emb_high, backend).to(torch.float64)
        low = cosine_discrepancy(x, prompts.emb_low, backend).to(torch.float64)
        p = torch.softmax(torch.stack((tau * high, tau * low), dim=-1), dim=-1)[..., 0]
    return float(p) if p.ndim == 0 else p


# --- reports -----------------------------------------------------------------

METRIC_NAMES = ("psnr", "ssim", "loe", "niqe", "semantic_score")


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, name: str, **values):
        self.rows.append({"name": name, **values})

    def means(self) -> dict:
        out = {}
        for key in METRIC_NAMES:
            vals = [r[key] for r in self.rows if r.get(key) is not None]
            out[key] = float(np.mean(vals)) if vals else None
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=("name",) + METRIC_NAMES)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row.get(k) for k in ("name",) + METRIC_NAMES})
            writer.writerow({"name": "mean", **self.means()})
