"""Uncertainty-guided saliency refinement with adaptive partitioned attention."""

__version__ = "0.1.0"

from .backbone import BackboneConfig, FeaturePyramid, TinyBackbone
from .config import ExperimentConfig
from .model import SaliencyNet
from .partition import CostReport, PartitionConfig, partitioned_attention

__all__ = [
    "BackboneConfig",
    "CostReport",
    "ExperimentConfig",
    "FeaturePyramid",
    "PartitionConfig",
    "SaliencyNet",
    "TinyBackbone",
    "partitioned_attention",
    "__version__",
]
