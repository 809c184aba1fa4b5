"""Local facial attribute editing through hole-based inpainting.

Three networks trained jointly: a reconstructor that fills a centered square
hole, an attribute-conditioned generator operating on the recomposed image,
and a critic with global and hole-local branches plus an attribute
classification head.
"""

__version__ = "0.1.0"

from .data import DatasetIndex, load_index, split
from .losses import LossReport, LossWeights
from .masking import (MaskSpec, apply_mask, centered_mask, compose_modified,
                      extract_contour, extract_patch)
from .metrics import EvalReport, evaluate_inpainting, psnr, ssim
from .networks import ModelBundle, NetConfig, init_bundle
from .trainer import TrainConfig, TrainState, train

__all__ = [
    "DatasetIndex", "load_index", "split",
    "LossReport", "LossWeights",
    "MaskSpec", "apply_mask", "centered_mask", "compose_modified",
    "extract_contour", "extract_patch",
    "EvalReport", "evaluate_inpainting", "psnr", "ssim",
    "ModelBundle", "NetConfig", "init_bundle",
    "TrainConfig", "TrainState", "train",
    "__version__",
]
