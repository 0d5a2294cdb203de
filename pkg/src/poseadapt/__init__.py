"""Periodic adaptation of pose-based anomaly scorers on multi-camera streams."""

from .domain import (
    ROI,
    CollectionBuffer,
    ConfusionCounts,
    FeatureVector,
    Keypoint,
    PoseFrame,
    PoseWindow,
    RunConfig,
    Schedule,
    ScorerWeights,
    ThresholdSet,
    Track,
    WindowRef,
)
from .errors import PoseAdaptError

__version__ = "0.1.0"

__all__ = [
    "ROI", "CollectionBuffer", "ConfusionCounts", "FeatureVector", "Keypoint", "PoseFrame",
    "PoseWindow", "RunConfig", "Schedule", "ScorerWeights", "ThresholdSet", "Track", "WindowRef",
    "PoseAdaptError",
]
