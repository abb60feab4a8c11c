"""The uniform segmentation boundary every backend implements."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

from ..core import BinaryMask, RasterImage
from ..prompts import PromptBundle


@dataclass(frozen=True)
class SegmentationResult:
    """One backend answer: a mask, a graded confidence, and provenance."""

    mask: BinaryMask
    confidence: float
    backend_id: str
    latency_ms: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")


@runtime_checkable
class SegmentationBackend(Protocol):
    """Anything that can answer segment(image, prompt).

    Implementations must return a mask matching the request image's
    dimensions and must tolerate concurrent calls from independent workers.
    """

    backend_id: str

    def segment(self, image: RasterImage, prompt: PromptBundle) -> SegmentationResult:
        ...


def check_result_dims(image: RasterImage, result: SegmentationResult) -> SegmentationResult:
    if (result.mask.width, result.mask.height) != (image.width, image.height):
        raise ValueError(
            f"backend {result.backend_id!r} returned {result.mask.width}x"
            f"{result.mask.height} mask for {image.width}x{image.height} image"
        )
    return result
