"""Deterministic synthetic scenes: labeled geometric objects on a flat field.

These are the desk-scale substrate for the toy backend: every object is a
(label, mask) pair, masks are pairwise disjoint, and the whole scene is a
pure function of its seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from ..core import BinaryMask, RasterImage
from ..errors import InfeasiblePackingError
from ..prompts import validate_phrase

SHAPE_KINDS = ("disk", "rectangle", "ring")

_BACKGROUND = 24
_PALETTE = (
    (200, 90, 90),
    (90, 200, 90),
    (90, 90, 200),
    (200, 200, 90),
    (90, 200, 200),
    (200, 90, 200),
)


def disk_mask(width: int, height: int, cx: int, cy: int, radius: int) -> BinaryMask:
    yy, xx = np.mgrid[0:height, 0:width]
    return BinaryMask((xx - cx) ** 2 + (yy - cy) ** 2 <= radius * radius)


def rect_mask(width: int, height: int, x0: int, y0: int, x1: int, y1: int) -> BinaryMask:
    bits = np.zeros((height, width), dtype=bool)
    bits[y0 : y1 + 1, x0 : x1 + 1] = True
    return BinaryMask(bits)


def ring_mask(
    width: int, height: int, cx: int, cy: int, r_outer: int, r_inner: int
) -> BinaryMask:
    yy, xx = np.mgrid[0:height, 0:width]
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return BinaryMask((d2 <= r_outer * r_outer) & (d2 > r_inner * r_inner))


@dataclass(frozen=True)
class SceneSpec:
    """Generation parameters: grid size, object count, shapes, labels."""

    width: int = 64
    height: int = 64
    object_count: int = 2
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    lexicon: tuple[str, ...] = ("disk", "rectangle", "ring")
    disk_radius: tuple[int, int] = (4, 8)
    rect_side: tuple[int, int] = (6, 14)
    ring_outer: tuple[int, int] = (6, 10)
    ring_thickness: tuple[int, int] = (2, 4)
    min_gap: int = 2
    max_attempts: int = 500

    def __post_init__(self):
        if self.object_count < 0:
            raise ValueError("object_count must be >= 0")
        if self.object_count > len(self.lexicon):
            raise ValueError(
                f"lexicon has {len(self.lexicon)} labels for {self.object_count} objects"
            )
        for kind in self.shape_kinds:
            if kind not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {kind!r}")
        for label in self.lexicon:
            validate_phrase(label)


@dataclass(frozen=True)
class SyntheticScene:
    image: RasterImage
    objects: tuple[tuple[str, BinaryMask], ...]
    seed: int

    def __post_init__(self):
        occupied = np.zeros((self.image.height, self.image.width), dtype=bool)
        for label, mask in self.objects:
            validate_phrase(label)
            if (mask.width, mask.height) != (self.image.width, self.image.height):
                raise ValueError(f"object {label!r} mask does not match scene size")
            if np.logical_and(occupied, mask.bits).any():
                raise ValueError("object masks must be pairwise disjoint")
            occupied |= mask.bits

    def mask_for(self, label: str) -> BinaryMask | None:
        for obj_label, mask in self.objects:
            if obj_label == label:
                return mask
        return None

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.objects)


def _rand_shape(spec: SceneSpec, rng: random.Random) -> BinaryMask:
    w, h = spec.width, spec.height
    kind = rng.choice(spec.shape_kinds)
    if kind == "disk":
        r = rng.randint(*spec.disk_radius)
        cx = rng.randint(r, w - 1 - r)
        cy = rng.randint(r, h - 1 - r)
        return disk_mask(w, h, cx, cy, r)
    if kind == "rectangle":
        sw = rng.randint(*spec.rect_side)
        sh = rng.randint(*spec.rect_side)
        x0 = rng.randint(0, w - sw)
        y0 = rng.randint(0, h - sh)
        return rect_mask(w, h, x0, y0, x0 + sw - 1, y0 + sh - 1)
    r_outer = rng.randint(*spec.ring_outer)
    r_inner = r_outer - rng.randint(*spec.ring_thickness)
    cx = rng.randint(r_outer, w - 1 - r_outer)
    cy = rng.randint(r_outer, h - 1 - r_outer)
    return ring_mask(w, h, cx, cy, r_outer, max(r_inner, 1))


def generate_scene(spec: SceneSpec, seed: int) -> SyntheticScene:
    """Place spec.object_count disjoint labeled shapes; deterministic in seed.

    Placement retries up to spec.max_attempts per object and raises
    InfeasiblePackingError when the grid cannot fit another object.
    """
    rng = random.Random(seed)
    blocked = np.zeros((spec.height, spec.width), dtype=bool)
    objects: list[tuple[str, BinaryMask]] = []
    for i in range(spec.object_count):
        placed = None
        for _ in range(spec.max_attempts):
            candidate = _rand_shape(spec, rng)
            if candidate.is_empty:
                continue
            if not np.logical_and(candidate.bits, blocked).any():
                placed = candidate
                break
        if placed is None:
            raise InfeasiblePackingError(
                f"could not place object {i} after {spec.max_attempts} attempts"
            )
        objects.append((spec.lexicon[i], placed))
        grown = ndimage.binary_dilation(
            placed.bits, structure=np.ones((3, 3), bool), iterations=spec.min_gap
        )
        blocked |= grown
    pixels = np.full((spec.height, spec.width, 3), _BACKGROUND, dtype=np.uint8)
    for i, (_, mask) in enumerate(objects):
        pixels[mask.bits] = _PALETTE[i % len(_PALETTE)]
    return SyntheticScene(RasterImage(pixels), tuple(objects), seed)
