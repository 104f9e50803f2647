"""Cycle, cooperative and inspection losses, and the full training objective."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import torch

from .errors import NumericFault
from .nrn import nrn_loss
from .tad import (
    acceptance_loss,
    adversarial_generator_loss,
    cosine_loss_high,
    cosine_loss_low,
    realism_loss,
    rejection_loss,
)

TERMS = ("nr", "adv", "con", "rec1", "rec2", "insp")


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def consistency_loss(i_l, cyc_l, i_h, cyc_h) -> torch.Tensor:
    """Both round trips should return to their starting image."""
    return l1(cyc_l, i_l) + l1(cyc_h, i_h)


def cooperative_rec1(pseudo_mask, mask, pseudo_high, pred_high) -> torch.Tensor:
    """Tie the extracted lightness mask to the enhanced image, low-light branch."""
    return l1(pseudo_mask, mask) + l1(pseudo_high, pred_high)


def cooperative_rec2(recon_high, i_h, pred_low, pred_mask) -> torch.Tensor:
    """High-light branch: degraded image plus its mask should rebuild ``i_h``.

    The second term is taken before any clamping.
    """
    if not (i_h.shape == pred_low.shape == pred_mask.shape):
        raise ValueError("i_h, pred_low and pred_mask must share a shape")
    return l1(recon_high, i_h) + (i_h - pred_low - pred_mask).abs().mean()


def inspection_loss(pseudo_high, pseudo_low, d_h, d_l) -> torch.Tensor:
    """Both pseudo images should pass their discriminator. No gradient reaches D."""
    return realism_loss(d_h, pseudo_high, "pseudo_high") + realism_loss(
        d_l, pseudo_low, "pseudo_low"
    )


@dataclass
class LossReport:
    nr: float
    adv_g: float
    adv_d: float
    con: float
    rec1: float
    rec2: float
    insp: float
    cl: float
    total: float
    step: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, line: str) -> "LossReport":
        return cls(**json.loads(line))


def total_loss(nr, adv_g, con, rec1, rec2, insp, adv_d=0.0, step=0) -> LossReport:
    """Sum the objective's components with unit weights into a report.

    Components may be floats or 0-d tensors; a non-finite one raises
    :class:`NumericFault` naming the term.
    """
    parts = dict(nr=nr, adv_g=adv_g, adv_d=adv_d, con=con, rec1=rec1, rec2=rec2, insp=insp)
    values = {}
    for name, value in parts.items():
        value = float(value.detach()) if isinstance(value, torch.Tensor) else float(value)
        if not math.isfinite(value):
            raise NumericFault(name)
        values[name] = value
    cl = values["rec1"] + values["rec2"] + values["insp"]
    total = values["nr"] + values["adv_g"] + values["con"] + cl
    return LossReport(cl=cl, total=total, step=step, **values)


def generator_terms(out, i_l, i_h, d_h, d_l, prompts, backend, weights=None):
    """Weighted generator-side terms as tensors, keyed ``nr, adv_g, con, rec1, rec2, insp``.

    ``adv_g`` covers both translation directions; the cosine loss is also
    applied to the two round-trip outputs.
    """
    w = {t: 1.0 for t in TERMS}
    w.update(weights or {})
    adv = (
        adversarial_generator_loss(out.fake_h, d_h, prompts, backend, "to_high")
        + adversarial_generator_loss(out.fake_l, d_l, prompts, backend, "to_low")
        + cosine_loss_high(out.cyc_h, prompts, backend)
        + cosine_loss_low(out.cyc_l, prompts, backend)
    )
    terms = {
        "nr": w["nr"] * nrn_loss(out.i_nr, i_l),
        "adv_g": w["adv"] * adv,
        "con": w["con"] * consistency_loss(i_l, out.cyc_l, i_h, out.cyc_h),
        "rec1": w["rec1"] * cooperative_rec1(out.pseudo_mask, out.i_m, out.pseudo_high, out.fake_h),
        "rec2": w["rec2"] * cooperative_rec2(out.recon_high, i_h, out.fake_l, out.fake_l_mask),
        "insp": w["insp"] * inspection_loss(out.pseudo_high, out.pseudo_low, d_h, d_l),
    }
    for name, value in terms.items():
        if not torch.isfinite(value):
            raise NumericFault(name)
    return terms


def generator_objective(out, i_l, i_h, d_h, d_l, prompts, backend, weights=None):
    """Scalar generator-side objective and its terms."""
    terms = generator_terms(out, i_l, i_h, d_h, d_l, prompts, backend, weights)
    total = terms["nr"] + terms["adv_g"] + terms["con"] + (terms["rec1"] + terms["rec2"] + terms["insp"])
    return total, terms


def discriminator_objective(out, i_l, i_h, d_h, d_l, pseudo_weight=0.0) -> torch.Tensor:
    """Each discriminator accepts its real domain and rejects generated images.

    ``pseudo_weight`` moves that share of the rejection term from the
    translated image to the pseudo image aimed at the same domain.
    """
    if not 0.0 <= pseudo_weight <= 1.0:
        raise ValueError("pseudo_weight must lie in [0, 1]")

    def one(d, real, fake, pseudo):
        reject = (1 - pseudo_weight) * rejection_loss(d, fake)
        if pseudo_weight:
            reject = reject + pseudo_weight * rejection_loss(d, pseudo)
        return 0.5 * (acceptance_loss(d, real) + reject)

    loss = one(d_h, i_h, out.fake_h, out.pseudo_high) + one(d_l, i_l, out.fake_l, out.pseudo_low)
    if not torch.isfinite(loss):
        raise NumericFault("adv_d")
    return loss
