"""Dual-loop training, learning-rate schedule, checkpoints and inference."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import torch
import yaml
from torch import nn

from .datasets import UnpairedCorpus, epoch_pairs
from .errors import CompatibilityError, ConfigurationError
from .generators import EnhancementModels, GeneratorNet, MaskExtractor, run_dual_loops
from .imaging import ImageTensor, UNIT_RANGE, crop_padding, pad_to_multiple, to_model_range
from .losses import LossReport, discriminator_objective, generator_objective, total_loss
from .nrn import NrnModel
from .tad import AppearanceDiscriminator, PromptPair, backend_from_spec

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "nerco-checkpoint"
CHECKPOINT_VERSION = 1

# Fields that change parameter shapes; a checkpoint only loads into a matching config.
ARCH_FIELDS = (
    "pe_levels",
    "nrn_features",
    "nrn_hidden",
    "nrn_hidden_layers",
    "nrn_pool",
    "ngf",
    "n_down",
    "n_blocks",
    "me_width",
    "d_ndf",
    "d_layers",
)

# Dotted aliases accepted in config files.
CONFIG_ALIASES = {
    "prompts.low": "prompt_low",
    "prompts.high": "prompt_high",
    "adam.beta1": "adam_beta1",
    "adam.beta2": "adam_beta2",
    "adam.eps": "adam_eps",
}


@dataclass
class TrainingConfig:
    epochs: int = 300
    lr: float = 2e-4
    decay_epochs: int = 200
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    batch: int = 1
    patch: int = 256
    pe_levels: int = 8
    seed: int = 0
    prompt_low: str = "low-light image"
    prompt_high: str = "high-light image"
    vl_backend: str = "stub:0"
    weights: dict = field(default_factory=lambda: {t: 1.0 for t in ("nr", "adv", "con", "rec1", "rec2", "insp")})
    checkpoint_every: int = 1
    grad_clip: float = 10.0
    # share of each discriminator's rejection term spent on the pseudo image
    d_pseudo_weight: float = 0.0
    flip: bool = True
    # architecture
    nrn_features: int = 64
    nrn_hidden: int = 256
    nrn_hidden_layers: int = 3
    nrn_pool: int = 8
    ngf: int = 32
    n_down: int = 2
    n_blocks: int = 6
    me_width: int = 64
    d_ndf: int = 64
    d_layers: int = 3

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainingConfig":
        known = {f.name for f in fields(cls)}
        kwargs = {}
        weights = {}
        for key, value in raw.items():
            key = CONFIG_ALIASES.get(key, key)
            if key.startswith("weights."):
                weights[key.split(".", 1)[1]] = float(value)
            elif key in known:
                kwargs[key] = value
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        config = cls(**kwargs)
        config.weights = {**cls().weights, **config.weights, **weights}
        return config

    @classmethod
    def from_file(cls, path) -> "TrainingConfig":
        with open(path) as fh:
            raw = yaml.safe_load(fh) or {}
        if not isinstance(raw, dict):
            raise ConfigurationError(f"{path} is not a key/value document")
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def architecture(self) -> dict:
        return {k: getattr(self, k) for k in ARCH_FIELDS}


def lr_at(config: TrainingConfig, epoch: int) -> float:
    """Constant learning rate, then a linear ramp to zero over the last ``decay_epochs``."""
    if not 0 <= epoch <= config.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {config.epochs}]")
    start = config.epochs - config.decay_epochs
    if epoch < start:
        return config.lr
    return config.lr * (config.epochs - epoch) / config.decay_epochs


class Discriminators(nn.Module):
    def __init__(self, d_h, d_l):
        super().__init__()
        self.d_h = d_h
        self.d_l = d_l


def build_models(config: TrainingConfig):
    models = EnhancementModels(
        nrn=NrnModel(
            pe_levels=config.pe_levels,
            feat_channels=config.nrn_features,
            hidden=config.nrn_hidden,
            hidden_layers=config.nrn_hidden_layers,
            feature_pool=config.nrn_pool,
        ),
        me=MaskExtractor(width=config.me_width),
        g_h=GeneratorNet(ngf=config.ngf, n_down=config.n_down, n_blocks=config.n_blocks),
        g_l=GeneratorNet(ngf=config.ngf, n_down=config.n_down, n_blocks=config.n_blocks),
    )
    discs = Discriminators(
        AppearanceDiscriminator(ndf=config.d_ndf, n_layers=config.d_layers),
        AppearanceDiscriminator(ndf=config.d_ndf, n_layers=config.d_layers),
    )
    return models, discs


@dataclass
class TrainState:
    config: TrainingConfig
    models: EnhancementModels
    discs: Discriminators
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    backend: object
    prompts: PromptPair
    epoch: int = 0
    step: int = 0


def build_state(config: TrainingConfig, backend=None) -> TrainState:
    """Fresh models and optimizers. Parameter init is seeded by ``config.seed``."""
    seed_everything(config.seed)
    models, discs = build_models(config)
    adam = dict(lr=config.lr, betas=(config.adam_beta1, config.adam_beta2), eps=config.adam_eps)
    opt_g = torch.optim.Adam(models.parameters(), **adam)
    opt_d = torch.optim.Adam(discs.parameters(), **adam)
    backend = backend if backend is not None else backend_from_spec(config.vl_backend)
    prompts = PromptPair.build(backend, config.prompt_low, config.prompt_high)
    return TrainState(config, models, discs, opt_g, opt_d, backend, prompts)


def seed_everything(seed: int):
    random.seed(seed)
    np.random.seed(seed % 2**32)
    torch.manual_seed(seed)


def set_lr(state: TrainState, epoch: int):
    lr = lr_at(state.config, epoch)
    for opt in (state.opt_g, state.opt_d):
        for group in opt.param_groups:
            group["lr"] = lr
    return lr


def generator_step(state: TrainState, i_l, i_h):
    """Update NRN, ME, G_H and G_L on the full generator-side objective."""
    state.models.train()
    state.opt_g.zero_grad(set_to_none=True)
    out = run_dual_loops(state.models, i_l, i_h)
    total, terms = generator_objective(
        out, i_l, i_h, state.discs.d_h, state.discs.d_l, state.prompts, state.backend, state.config.weights
    )
    total.backward()
    if state.config.grad_clip:
        nn.utils.clip_grad_norm_(state.models.parameters(), state.config.grad_clip)
    state.opt_g.step()
    return out, terms


def discriminator_step(state: TrainState, out, i_l, i_h):
    """Update both appearance discriminators; generator outputs are detached."""
    state.discs.train()
    state.opt_d.zero_grad(set_to_none=True)
    loss = discriminator_objective(
        out, i_l, i_h, state.discs.d_h, state.discs.d_l, state.config.d_pseudo_weight
    )
    loss.backward()
    if state.config.grad_clip:
        nn.utils.clip_grad_norm_(state.discs.parameters(), state.config.grad_clip)
    state.opt_d.step()
    return loss


def _batch(x):
    if isinstance(x, ImageTensor):
        x = to_model_range(x).data
    return x.unsqueeze(0) if x.ndim == 3 else x


def train_step(state: TrainState, i_l, i_h) -> LossReport:
    """One generator-side update followed by one discriminator-side update."""
    i_l, i_h = _batch(i_l), _batch(i_h)
    out, terms = generator_step(state, i_l, i_h)
    loss_d = discriminator_step(state, out, i_l, i_h)
    state.step += 1
    return total_loss(
        nr=terms["nr"],
        adv_g=terms["adv_g"],
        con=terms["con"],
        rec1=terms["rec1"],
        rec2=terms["rec2"],
        insp=terms["insp"],
        adv_d=loss_d,
        step=state.step,
    )


def _batches(corpus, epoch, config):
    pairs = epoch_pairs(corpus, epoch, config.seed)
    while True:
        chunk = [p for _, p in zip(range(config.batch), pairs)]
        if not chunk:
            return
        lows = torch.stack([lo.data for lo, _ in chunk])
        highs = torch.stack([hi.data for _, hi in chunk])
        yield lows, highs


def train(config: TrainingConfig, data_root, out_dir, state=None, max_steps=None):
    """Train on ``<data_root>/low`` and ``<data_root>/high``.

    Writes ``losses.jsonl`` (one LossReport per step) and checkpoints
    ``epoch_<n>.pt`` / ``latest.pt`` into ``out_dir``.  Returns the state.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = UnpairedCorpus.from_root(data_root, patch_size=config.patch, flip=config.flip)
    state = state or build_state(config)
    with open(out_dir / "losses.jsonl", "a") as log_file:
        for epoch in range(state.epoch, config.epochs):
            lr = set_lr(state, epoch)
            for i_l, i_h in _batches(corpus, epoch, config):
                report = train_step(state, i_l, i_h)
                log_file.write(report.to_json() + "\n")
                if max_steps is not None and state.step >= max_steps:
                    log_file.flush()
                    save_checkpoint(state, out_dir / "latest.pt")
                    return state
            state.epoch = epoch + 1
            log.info("epoch %d done, lr %.3g, total %.4f", epoch, lr, report.total)
            if state.epoch % config.checkpoint_every == 0 or state.epoch == config.epochs:
                save_checkpoint(state, out_dir / f"epoch_{state.epoch:03d}.pt")
                save_checkpoint(state, out_dir / "latest.pt")
    return state


def save_checkpoint(state: TrainState, path):
    torch.save(
        {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "config": state.config.to_dict(),
            "config_hash": state.config.config_hash(),
            "models": state.models.state_dict(),
            "discs": state.discs.state_dict(),
            "opt_g": state.opt_g.state_dict(),
            "opt_d": state.opt_d.state_dict(),
            "epoch": state.epoch,
            "step": state.step,
            "rng": {
                "torch": torch.get_rng_state(),
                "numpy": np.random.get_state(),
                "python": random.getstate(),
            },
        },
        Path(path),
    )


def load_checkpoint(path, config: TrainingConfig | None = None, backend=None) -> TrainState:
    """Restore a training state.

    If ``config`` is given, its architecture must match the checkpoint's;
    otherwise the checkpoint's own config is used.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such checkpoint: {path}")
    blob = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != CHECKPOINT_FORMAT:
        raise CompatibilityError(f"{path} is not a checkpoint of this package")
    if blob.get("version") != CHECKPOINT_VERSION:
        raise CompatibilityError(f"checkpoint version {blob.get('version')} != {CHECKPOINT_VERSION}")
    saved = TrainingConfig.from_dict(blob["config"])
    if saved.config_hash() != blob["config_hash"]:
        raise CompatibilityError("checkpoint config does not match its recorded hash")
    if config is not None:
        mismatched = {
            k: (v, saved.architecture()[k]) for k, v in config.architecture().items() if saved.architecture()[k] != v
        }
        if mismatched:
            detail = ", ".join(f"{k}: requested {a}, checkpoint {b}" for k, (a, b) in mismatched.items())
            raise CompatibilityError(f"checkpoint architecture differs ({detail})")
    else:
        config = saved
    state = build_state(config, backend)
    state.models.load_state_dict(blob["models"])
    state.discs.load_state_dict(blob["discs"])
    state.opt_g.load_state_dict(blob["opt_g"])
    state.opt_d.load_state_dict(blob["opt_d"])
    state.epoch, state.step = blob["epoch"], blob["step"]
    rng = blob["rng"]
    torch.set_rng_state(rng["torch"])
    np.random.set_state(rng["numpy"])
    random.setstate(rng["python"])
    return state


def infer(state: TrainState, img: ImageTensor) -> ImageTensor:
    """Enhance one full-resolution image; returns a ``[0, 1]`` image of the same size."""
    x = to_model_range(img).data
    x, pad = pad_to_multiple(x, 2**state.config.n_down)
    state.models.eval()
    y = state.models.enhance_image(x.unsqueeze(0))[0]
    y = crop_padding(y, pad)
    return ImageTensor(((y + 1) / 2).clamp(*UNIT_RANGE), UNIT_RANGE, "RGB")
