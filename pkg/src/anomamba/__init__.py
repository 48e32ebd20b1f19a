"""Anomaly localization for textured surfaces.

Pipeline: Perlin-noise defect synthesis -> frozen dual-branch multi-scale
feature embedding -> bidirectional selective-scan feature reconstruction ->
U-Net-style refinement into a per-pixel anomaly map.
"""

__version__ = "0.1.0"

from .backbone import BackboneSpec, FeatureEmbedder, FeatureStack  # noqa: F401
from .config import RunConfig, desk_profile  # noqa: F401
from .model import Pipeline  # noqa: F401
from .refine import AnomalyMap  # noqa: F401
from .tensor import Tensor  # noqa: F401
