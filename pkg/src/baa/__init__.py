"""Binarization-aware adjuster: threshold-distance loss weighting for binary decision learning."""

__version__ = "0.1.0"

from .adjuster import BaaParams, baa_weight, baa_weight_grad, hard_adjuster, limit_adjuster, masked_distance
from .dwf import DomainError, DwfParams, dwf_exp, dwf_extended, dwf_extended_derivative, dwf_hard, dwf_linear
from .loss import LossConfig, PixelBatch, adjusted_loss, bce_elem, wbce_batch
from .metrics import BinaryMap, ConfusionCounts, EvalReport, binarize, evaluate, match_with_tolerance, ods, ois

__all__ = [
    "BaaParams", "baa_weight", "baa_weight_grad", "hard_adjuster", "limit_adjuster", "masked_distance",
    "DomainError", "DwfParams", "dwf_exp", "dwf_extended", "dwf_extended_derivative", "dwf_hard", "dwf_linear",
    "LossConfig", "PixelBatch", "adjusted_loss", "bce_elem", "wbce_batch",
    "BinaryMap", "ConfusionCounts", "EvalReport", "binarize", "evaluate", "match_with_tolerance", "ods", "ois",
]
