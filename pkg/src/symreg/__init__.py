"""Symmetric diffeomorphic registration of 3D volumes with stationary velocity fields."""

from .evaluate import DiceReport, FoldReport, dice, fold_report, synth_pair, translation_pair
from .field import compose, exp_svf, full_transforms, identity_field, mean_displacement, softsign_normalize
from .loss import LossBreakdown, LossWeights, jacobian_det_field, ncc, total_loss
from .registrar import RegistrationConfig, RegistrationResult, register
from .volume import LabelMap, Volume, VolumeFormatError, load_field, load_volume, save_field, save_volume
from .warp import warp_image, warp_labels

__version__ = "0.1.0"

__all__ = [
    "DiceReport",
    "FoldReport",
    "LabelMap",
    "LossBreakdown",
    "LossWeights",
    "RegistrationConfig",
    "RegistrationResult",
    "Volume",
    "VolumeFormatError",
    "compose",
    "dice",
    "exp_svf",
    "fold_report",
    "full_transforms",
    "identity_field",
    "jacobian_det_field",
    "load_field",
    "load_volume",
    "mean_displacement",
    "ncc",
    "register",
    "save_field",
    "save_volume",
    "softsign_normalize",
    "synth_pair",
    "total_loss",
    "translation_pair",
    "warp_image",
    "warp_labels",
]
