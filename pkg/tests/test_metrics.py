import csv
import math
import os

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scene
from nerco.errors import ConfigurationError
from nerco.metrics import (
    MetricReport,
    NiqeModel,
    _nearest_resize,
    imresize,
    lightness,
    loe,
    loe_from_lightness,
    niqe,
    niqe_distance,
    niqe_features,
    psnr,
    semantic_score,
    ssim,
    ssim_map,
)
from nerco.tad import PromptPair, StubBackend

# NIQE of the bundled astronaut photo (BT.601 gray, rounded to 8 bit) from the
# float32 BasicSR 1.4.2 implementation, run once against the same parameter file.
ASTRONAUT_NIQE_REFERENCE = 3.0624819852836125


class FixedBackend:
    def __init__(self, emb):
        self.emb = emb

    def encode_image(self, x):
        return self.emb.to(torch.float64)


def e(i, dim=4):
    v = torch.zeros(dim, dtype=torch.float64)
    v[i] = 1.0
    return v


def test_psnr_examples():
    a = np.full((8, 8, 3), 0.3)
    assert psnr(a, a) == math.inf
    assert abs(psnr(a, a + 0.1) - 20.0) <= 1e-3
    assert abs(psnr(a, a + 0.5) - 6.0206) <= 1e-3
    with pytest.raises(ValueError):
        psnr(a, a[:4])


@settings(max_examples=20)
@given(st.integers(0, 2**31 - 1))
def test_psnr_symmetric(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.rand(3, 6, 6, generator=g), torch.rand(3, 6, 6, generator=g)
    assert psnr(a, b) == psnr(b, a) and psnr(a, b) >= 0


def test_ssim_identical_is_one_and_small_image_rejected():
    x = scene("camera")[:, ::8, ::8]
    assert ssim(x, x) == 1.0
    with pytest.raises(ValueError):
        ssim(torch.rand(3, 10, 40), torch.rand(3, 10, 40))
    with pytest.raises(ValueError):
        ssim(torch.rand(3, 20, 20), torch.rand(3, 20, 21))


def reference_ssim_single_window(x, y):
    """SSIM of one 11x11 patch with explicit Gaussian-weighted sums."""
    r = np.arange(11) - 5
    w = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * 1.5**2))
    w /= w.sum()
    mx, my = (w * x).sum(), (w * y).sum()
    vx, vy = (w * (x - mx) ** 2).sum(), (w * (y - my) ** 2).sum()
    cxy = (w * (x - mx) * (y - my)).sum()
    c1, c2 = 0.01**2, 0.03**2
    return (2 * mx * my + c1) * (2 * cxy + c2) / ((mx**2 + my**2 + c1) * (vx + vy + c2))


def test_ssim_of_negative_matches_reference_and_is_negative():
    yy, xx = np.mgrid[:11, :11]
    pattern = 0.5 + 0.3 * np.sin(xx * 1.3) * np.cos(yy * 0.7)
    got = ssim(pattern, 1 - pattern)
    assert got < 0
    assert math.isclose(got, reference_ssim_single_window(pattern, 1 - pattern), rel_tol=1e-9)
    assert ssim_map(pattern, 1 - pattern).shape == (1, 1)


def test_ssim_constant_images_luminance_only():
    a, b = 0.4, 0.5
    c1 = 0.01**2
    want = (2 * a * b + c1) / (a * a + b * b + c1)
    got = ssim(np.full((16, 16, 3), a), np.full((16, 16, 3), b))
    assert math.isclose(got, want, rel_tol=1e-9)


def brute_force_loe(original, enhanced):
    o, e_ = np.ravel(original), np.ravel(enhanced)
    m = len(o)
    flips = sum((o[i] >= o[j]) != (e_[i] >= e_[j]) for i in range(m) for j in range(m) if i != j)
    return 1000.0 * flips / (m * (m - 1))


def test_loe_examples():
    x = scene("coffee")[:, ::6, ::6]
    assert loe(x, x) == 0.0
    assert loe(x**0.5, x) == 0.0 and loe(x**2.2, x) == 0.0
    assert loe_from_lightness(np.array([3.0, 1, 2]), np.array([1.0, 2, 3])) == brute_force_loe([1, 2, 3], [3, 1, 2])
    with pytest.raises(ValueError):
        loe(x, x[:, :10])


def test_loe_matches_brute_force_on_small_images():
    rng = np.random.default_rng(0)
    for _ in range(5):
        o = rng.integers(0, 8, (5, 7)).astype(float)
        enh = rng.integers(0, 8, (5, 7)).astype(float)
        assert loe(enh, o) == brute_force_loe(o, enh)


def test_loe_uses_channel_max_and_downsamples_large_images():
    rgb = np.zeros((2, 2, 3))
    rgb[0, 0] = [0.1, 0.9, 0.2]
    assert lightness(rgb)[0, 0] == 0.9
    rng = np.random.default_rng(1)
    o, enh = rng.random((120, 80)), rng.random((120, 80))
    small_o, small_e = _nearest_resize(o), _nearest_resize(enh)
    assert small_o.shape == (75, 50)
    assert loe(enh, o) == loe_from_lightness(small_e, small_o)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 5.0), st.floats(0.5, 3.0))
def test_loe_invariant_under_monotone_curves(gamma, gain):
    x = scene("chelsea")[:, ::5, ::5].double()
    curved = gain * x**gamma + 0.01
    assert loe(curved, x) == 0.0


def test_niqe_model_file():
    model = NiqeModel.load()
    assert model.mu.shape == (36,) and model.cov.shape == (36, 36) and model.window.shape == (7, 7)
    with pytest.raises(ConfigurationError):
        NiqeModel.load("/nonexistent/niqe.npz")


def test_niqe_zero_at_model_mean():
    model = NiqeModel.load()
    assert niqe_distance(model.mu.copy(), np.zeros((36, 36)), model) == 0.0


def test_niqe_matches_reference_implementation():
    photo = scene("astronaut").double()
    assert abs(niqe(photo) - ASTRONAUT_NIQE_REFERENCE) < 1e-3


def test_niqe_orders_noise_above_photo_and_is_deterministic():
    model = NiqeModel.load()
    photo = scene("astronaut")[:, :288, :288]
    noise = torch.rand(3, 288, 288, generator=torch.Generator().manual_seed(0))
    assert niqe(noise, model) > niqe(photo, model)
    assert niqe(photo, model) == niqe(photo, model)
    with pytest.raises(ValueError):
        niqe(torch.rand(3, 95, 200), model)


def test_niqe_feature_layout():
    model = NiqeModel.load()
    gray = np.round(np.random.default_rng(0).random((200, 300)) * 255)
    feats = niqe_features(gray, model.window)
    assert feats.shape == (2 * 3, 36)


def test_imresize_halves_and_keeps_constants():
    x = np.full((37, 50), 0.25)
    y = imresize(x, 0.5)
    assert y.shape == (19, 25)
    np.testing.assert_allclose(y, 0.25, atol=1e-12)


def test_semantic_score_examples():
    p = PromptPair("low", "high", e(0), e(1))
    img = torch.zeros(3, 8, 8)
    assert semantic_score(img, p, FixedBackend(e(0) + e(1))) == 0.5
    assert semantic_score(img, p, FixedBackend(e(1))) > 1 - 1e-12
    assert semantic_score(img, p, FixedBackend(e(0))) < 1e-12


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_semantic_score_symmetry(seed):
    backend = StubBackend(seed % 13)
    prompts = PromptPair.build(backend, "dim", "light")
    g = torch.Generator().manual_seed(seed)
    x = torch.rand(3, 8, 8, generator=g) * 2 - 1
    s = semantic_score(x, prompts, backend)
    assert 0 <= s <= 1
    assert abs(s + semantic_score(x, prompts.swapped(), backend) - 1) <= 1e-9


def test_semantic_score_batch():
    backend = StubBackend(0)
    prompts = PromptPair.build(backend)
    scores = semantic_score(torch.rand(4, 3, 8, 8) * 2 - 1, prompts, backend)
    assert scores.shape == (4,)


@pytest.mark.skipif(not os.environ.get("NERCO_CLIP_PATH"), reason="set NERCO_CLIP_PATH to a local CLIP checkpoint")
def test_semantic_score_prefers_bright_photo_with_pretrained_encoder():
    from nerco.tad import PretrainedBackend

    backend = PretrainedBackend(os.environ["NERCO_CLIP_PATH"])
    prompts = PromptPair.build(backend)
    photo = scene("astronaut")
    bright = semantic_score(photo * 2 - 1, prompts, backend)
    dark = semantic_score(photo * 0.1 * 2 - 1, prompts, backend)
    assert bright > dark


def test_metric_report_means_and_csv(tmp_path):
    report = MetricReport()
    report.add("a.png", psnr=20.0, ssim=0.5, loe=10.0, niqe=None, semantic_score=0.2)
    report.add("b.png", psnr=30.0, ssim=0.7, loe=30.0, niqe=4.0, semantic_score=0.6)
    means = report.means()
    assert means["psnr"] == 25.0 and math.isclose(means["ssim"], 0.6) and means["loe"] == 20.0
    assert means["niqe"] == 4.0 and math.isclose(means["semantic_score"], 0.4)
    path = tmp_path / "r.csv"
    report.write_csv(path)
    rows = list(csv.DictReader(open(path)))
    assert [r["name"] for r in rows] == ["a.png", "b.png", "mean"]
    assert float(rows[-1]["psnr"]) == 25.0 and rows[0]["niqe"] == ""
