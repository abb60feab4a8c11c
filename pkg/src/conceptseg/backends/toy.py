"""Deterministic synthetic oracle backend.

The toy backend answers prompts against a SyntheticScene whose objects it
knows exactly, then degrades the answer through configurable corruption.
It exists to reproduce, at desk scale, the failure phenomenology seen when
text grounding breaks: zero rows for unknown vocabulary, wrong-object
masks for misgrounded phrases, and recovery when a box accompanies the
text.

Resolution order for one prompt:

1. TEXT / TEXT_BOX whose phrase is in the vocabulary and labels a scene
   object -> that object's mask, confidence 1.0.
2. Phrase has a misground_map entry whose mapped label is in the scene ->
   the mapped (wrong) object's mask, confidence 0.35.
3. TEXT that resolved nowhere -> empty mask, confidence 0.0.
4. BOX, or TEXT_BOX with box_rescue enabled after text resolution failed
   -> the object whose mask has maximal IoU with the box, confidence =
   that IoU.

Corruption (dilate, then erode, then shift; the order matters because
the operations do not commute) is applied after resolution, seeded from
(world seed, scene seed, prompt) so results are fully deterministic.
Confidence values are synthetic: the published benchmarks never define
one, but the agent needs a graded signal.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..core import BinaryMask, RasterImage
from ..errors import UnknownModeError
from ..prompts import PromptBundle, PromptMode, validate_phrase
from .base import SegmentationResult
from .scenes import SyntheticScene
from .wire import encode_prompt_payload

MISGROUND_CONFIDENCE = 0.35

_SHIFT_DIRECTIONS = (
    (1, 0), (-1, 0), (0, 1), (0, -1),
    (1, 1), (1, -1), (-1, 1), (-1, -1),
)


@dataclass(frozen=True)
class Corruption:
    """Mask degradation magnitudes, all in pixels, all >= 0."""

    dilate_px: int = 0
    erode_px: int = 0
    shift_px: int = 0

    def __post_init__(self):
        for name in ("dilate_px", "erode_px", "shift_px"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def is_noop(self) -> bool:
        return self.dilate_px == 0 and self.erode_px == 0 and self.shift_px == 0


@dataclass(frozen=True)
class ToyWorldConfig:
    """What the toy model "knows": its vocabulary and its failure modes."""

    vocabulary: frozenset[str] = frozenset()
    misground_map: tuple[tuple[str, str], ...] = ()
    corruption: Corruption = field(default_factory=Corruption)
    box_rescue: bool = False
    seed: int = 0

    def __post_init__(self):
        vocab = frozenset(validate_phrase(p).text for p in self.vocabulary)
        object.__setattr__(self, "vocabulary", vocab)
        pairs = tuple(
            (validate_phrase(k).text, validate_phrase(v).text)
            for k, v in (
                self.misground_map.items()
                if isinstance(self.misground_map, dict)
                else self.misground_map
            )
        )
        object.__setattr__(self, "misground_map", pairs)

    @property
    def misgrounds(self) -> dict[str, str]:
        return dict(self.misground_map)


def _shift_bits(bits: np.ndarray, dx: int, dy: int) -> np.ndarray:
    """Translate with zero fill (no wrap-around)."""
    out = np.zeros_like(bits)
    h, w = bits.shape
    src_x = slice(max(0, -dx), min(w, w - dx))
    dst_x = slice(max(0, dx), min(w, w + dx))
    src_y = slice(max(0, -dy), min(h, h - dy))
    dst_y = slice(max(0, dy), min(h, h + dy))
    out[dst_y, dst_x] = bits[src_y, src_x]
    return out


def apply_corruption(mask: BinaryMask, corruption: Corruption, seed_key: str) -> BinaryMask:
    """Dilate -> erode -> shift; the shift direction is drawn from seed_key."""
    if corruption.is_noop:
        return mask
    bits = mask.bits
    struct = np.ones((3, 3), dtype=bool)
    if corruption.dilate_px:
        bits = ndimage.binary_dilation(bits, structure=struct, iterations=corruption.dilate_px)
    if corruption.erode_px:
        bits = ndimage.binary_erosion(
            bits, structure=struct, iterations=corruption.erode_px, border_value=0
        )
    if corruption.shift_px:
        rng = random.Random(int(hashlib.sha256(seed_key.encode()).hexdigest()[:16], 16))
        dx, dy = rng.choice(_SHIFT_DIRECTIONS)
        bits = _shift_bits(np.asarray(bits), dx * corruption.shift_px, dy * corruption.shift_px)
    return BinaryMask(np.asarray(bits))


def _iou(a: BinaryMask, b: BinaryMask) -> float:
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    return inter / union if union else 0.0


def toy_segment(
    world: ToyWorldConfig, scene: SyntheticScene, prompt: PromptBundle
) -> SegmentationResult:
    """Resolve a prompt against a scene per the rules in the module docstring."""
    if prompt.mode not in (PromptMode.TEXT, PromptMode.TEXT_BOX, PromptMode.BOX):
        raise UnknownModeError(f"toy backend cannot serve mode {prompt.mode}")
    resolved: BinaryMask | None = None
    confidence = 0.0
    phrase = prompt.phrase.text if prompt.phrase is not None else None
    if phrase is not None:
        if phrase in world.vocabulary:
            mask = scene.mask_for(phrase)
            if mask is not None:
                resolved, confidence = mask, 1.0
        if resolved is None:
            mapped = world.misgrounds.get(phrase)
            if mapped is not None:
                mask = scene.mask_for(mapped)
                if mask is not None:
                    resolved, confidence = mask, MISGROUND_CONFIDENCE
    box_eligible = prompt.mode is PromptMode.BOX or (
        prompt.mode is PromptMode.TEXT_BOX and world.box_rescue
    )
    if resolved is None and box_eligible and prompt.box is not None:
        box_mask = prompt.box.as_mask(scene.image.width, scene.image.height)
        best_iou = 0.0
        best_mask: BinaryMask | None = None
        for _, mask in scene.objects:
            iou = _iou(box_mask, mask)
            if iou > best_iou:
                best_iou, best_mask = iou, mask
        if best_mask is not None:
            resolved, confidence = best_mask, best_iou
    if resolved is None:
        resolved = BinaryMask.empty(scene.image.width, scene.image.height)
        confidence = 0.0
    seed_key = (
        f"{world.seed}|{scene.seed}|"
        f"{sorted(encode_prompt_payload(prompt).items())}"
    )
    corrupted = apply_corruption(resolved, world.corruption, seed_key)
    return SegmentationResult(mask=corrupted, confidence=confidence, backend_id="toy")


class ToyBackend:
    """Backend boundary adapter for a single scene."""

    def __init__(self, world: ToyWorldConfig, scene: SyntheticScene, backend_id: str = "toy"):
        self.world = world
        self.scene = scene
        self.backend_id = backend_id

    def segment(self, image: RasterImage, prompt: PromptBundle) -> SegmentationResult:
        if (image.width, image.height) != (self.scene.image.width, self.scene.image.height):
            raise UnknownModeError(
                f"image {image.width}x{image.height} does not match the bound scene"
            )
        result = toy_segment(self.world, self.scene, prompt)
        if result.backend_id != self.backend_id:
            result = SegmentationResult(
                mask=result.mask,
                confidence=result.confidence,
                backend_id=self.backend_id,
                latency_ms=result.latency_ms,
            )
        return result


class ToySuiteBackend:
    """Backend serving many scenes, dispatched by image content digest.

    Evaluation re-loads images from disk, so dispatch keys on the decoded
    pixel content rather than object identity.
    """

    def __init__(self, world: ToyWorldConfig, scenes: dict[str, SyntheticScene],
                 backend_id: str = "toy"):
        self.world = world
        self.backend_id = backend_id
        self._by_digest = {scene.image.digest(): scene for scene in scenes.values()}

    @classmethod
    def from_scenes(cls, world: ToyWorldConfig, scenes: list[SyntheticScene],
                    backend_id: str = "toy") -> "ToySuiteBackend":
        return cls(world, {str(i): s for i, s in enumerate(scenes)}, backend_id)

    def segment(self, image: RasterImage, prompt: PromptBundle) -> SegmentationResult:
        scene = self._by_digest.get(image.digest())
        if scene is None:
            raise UnknownModeError("toy suite backend received an image from no known scene")
        result = toy_segment(self.world, scene, prompt)
        return SegmentationResult(
            mask=result.mask,
            confidence=result.confidence,
            backend_id=self.backend_id,
            latency_ms=result.latency_ms,
        )
