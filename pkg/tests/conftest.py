import numpy as np
import pytest
import skimage.data
import torch
from PIL import Image

from nerco.trainer import TrainingConfig

# One line per acceptance criterion, echoed at the end of the session.
ACCEPTANCE_LINES = []

SCENES = ("astronaut", "coffee", "chelsea", "rocket")


def scene(name):
    """Bundled scikit-image photo as float32 (3, H, W) in [0, 1]."""
    im = getattr(skimage.data, name)()
    if im.ndim == 2:
        im = np.stack([im] * 3, axis=-1)
    return torch.from_numpy(im[..., :3].astype(np.float32) / 255).permute(2, 0, 1).contiguous()


def write_png(path, chw):
    arr = (chw.permute(1, 2, 0).numpy() * 255).round().astype(np.uint8)
    Image.fromarray(arr).save(path)


def make_toy_corpus(root, n_low=8, n_high=8, size=64, seed=0):
    """Random crops of the bundled photos; low images are darkened by a gain in [0.1, 0.3]."""
    rng = np.random.default_rng(seed)
    photos = [scene(n) for n in SCENES]
    for sub, n in (("low", n_low), ("high", n_high)):
        (root / sub).mkdir(parents=True, exist_ok=True)
        for i in range(n):
            im = photos[i % len(photos)]
            y = rng.integers(0, im.shape[1] - size)
            x = rng.integers(0, im.shape[2] - size)
            crop = im[:, y : y + size, x : x + size].double()
            if sub == "low":
                crop = crop * rng.uniform(0.1, 0.3)
            write_png(root / sub / f"{i}.png", crop.float())
    return root


def toy_config(**overrides):
    """Narrow networks on 32 px patches so a few hundred steps fit a single CPU core."""
    base = dict(
        patch=32,
        epochs=1000,
        decay_epochs=1,
        ngf=16,
        n_blocks=2,
        nrn_hidden=64,
        me_width=16,
        d_ndf=16,
        checkpoint_every=1000,
    )
    base.update(overrides)
    return TrainingConfig(**base)


@pytest.fixture
def toy_corpus(tmp_path):
    return make_toy_corpus(tmp_path / "data")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
