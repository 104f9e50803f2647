"""Unsupervised low-light image enhancement.

A neural-representation normalizer, attention-guided enhancement and
degradation generators trained in two closed loops, and text-driven
appearance discriminators.
"""

from .imaging import ImageTensor, load_image, save_image, to_luma, high_pass
from .trainer import TrainingConfig, build_state, train_step, infer, load_checkpoint, save_checkpoint

__all__ = [
    "ImageTensor",
    "load_image",
    "save_image",
    "to_luma",
    "high_pass",
    "TrainingConfig",
    "build_state",
    "train_step",
    "infer",
    "load_checkpoint",
    "save_checkpoint",
]
