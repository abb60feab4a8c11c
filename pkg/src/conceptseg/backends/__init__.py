"""Segmentation backends behind one uniform segment(image, prompt) boundary."""

from .base import SegmentationBackend, SegmentationResult, check_result_dims
from .remote import RemoteBackend
from .replay import FixtureWriter, RecordingBackend, ReplayBackend, load_fixture
from .scenes import SceneSpec, SyntheticScene, disk_mask, generate_scene, rect_mask, ring_mask
from .toy import (
    Corruption,
    MISGROUND_CONFIDENCE,
    ToyBackend,
    ToySuiteBackend,
    ToyWorldConfig,
    apply_corruption,
    toy_segment,
)

__all__ = [
    "SegmentationBackend",
    "SegmentationResult",
    "check_result_dims",
    "RemoteBackend",
    "ReplayBackend",
    "RecordingBackend",
    "FixtureWriter",
    "load_fixture",
    "SceneSpec",
    "SyntheticScene",
    "generate_scene",
    "disk_mask",
    "rect_mask",
    "ring_mask",
    "Corruption",
    "ToyWorldConfig",
    "ToyBackend",
    "ToySuiteBackend",
    "toy_segment",
    "apply_corruption",
    "MISGROUND_CONFIDENCE",
]
