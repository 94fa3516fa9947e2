"""Asymmetric F-beta losses, patch fusion and lesion metrics for 3D segmentation."""

from ._kernels import BACKEND
from .fusion import FusionSpec, fuse, spline_kernel
from .losses import (LossSpec, f_beta_loss_with_grad, f_beta_score, focal_loss_with_grad,
                     gdl_loss_with_grad)
from .metrics import evaluate
from .patching import build_grid, extract_patch, select_training_patches
from .volume import Mask, ProbabilityMap, Volume, load_volume, save_volume, threshold

__version__ = "0.1.0"
