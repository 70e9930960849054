"""Dual-encoder U-shaped segmentation network, desk-scale reference build."""

from .blocks import DecoderOutputs, DSUNet
from .config import PROFILES, ModelConfig, RunConfig
from .encoders import FeaturePyramid
from .estimator import DSUNetEstimator
from .tensor import ConvSpec, Tensor, grad_check

__all__ = [
    "ConvSpec",
    "DSUNet",
    "DSUNetEstimator",
    "DecoderOutputs",
    "FeaturePyramid",
    "ModelConfig",
    "PROFILES",
    "RunConfig",
    "Tensor",
    "grad_check",
]

__version__ = "0.1.0"
