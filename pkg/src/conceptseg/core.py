"""Canonical pixel-domain types and codecs.

Conventions used throughout the harness:

- Pixel grids are row-major; pixel (x, y) lives at ``array[y, x]``.
- Masks are strictly binary, one mask per target.
- Box coordinates are inclusive pixel indices.
- Mask files on disk are 8-bit single-channel PNG, nonzero = foreground.
"""

from __future__ import annotations

import hashlib
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import DimensionMismatchError, MalformedEncodingError

# Blend target for overlay(); documented default, override per call if needed.
DEFAULT_HIGHLIGHT = (255, 0, 0)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """A 2D image, 8-bit per channel, 1 (grayscale) or 3 (RGB) channels."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels)
        if arr.ndim == 3 and arr.shape[2] == 1:
            arr = arr[:, :, 0]
        if arr.ndim not in (2, 3) or (arr.ndim == 3 and arr.shape[2] != 3):
            raise ValueError(f"image must be (h, w) or (h, w, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image dimensions must be >= 1")
        arr = _freeze(np.ascontiguousarray(arr, dtype=np.uint8))
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return 1 if self.pixels.ndim == 2 else 3

    def __eq__(self, other) -> bool:
        return isinstance(other, RasterImage) and np.array_equal(self.pixels, other.pixels)

    def digest(self) -> str:
        """Content digest over dimensions and raw pixel bytes (PNG-independent)."""
        h = hashlib.sha256()
        h.update(f"img:{self.width}x{self.height}x{self.channels}:".encode())
        h.update(self.pixels.tobytes())
        return h.hexdigest()


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """A row-major boolean pixel grid annotating one target on one image."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ValueError(f"mask must be 2D, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("mask dimensions must be >= 1")
        arr = _freeze(np.ascontiguousarray(arr != 0))
        object.__setattr__(self, "bits", arr)

    @classmethod
    def empty(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def full(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def foreground_count(self) -> int:
        return int(self.bits.sum())

    @property
    def is_empty(self) -> bool:
        return not bool(self.bits.any())

    def __eq__(self, other) -> bool:
        return isinstance(other, BinaryMask) and np.array_equal(self.bits, other.bits)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"mask:{self.width}x{self.height}:".encode())
        h.update(np.packbits(self.bits).tobytes())
        return h.hexdigest()


@dataclass(frozen=True)
class BoxPrompt:
    """Axis-aligned box with inclusive pixel coordinates."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        for name in ("x_min", "y_min", "x_max", "y_max"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool):
                raise ValueError(f"box coordinate {name} must be an integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (0 <= self.x_min <= self.x_max):
            raise ValueError(f"box requires 0 <= x_min <= x_max, got {self}")
        if not (0 <= self.y_min <= self.y_max):
            raise ValueError(f"box requires 0 <= y_min <= y_max, got {self}")

    def validate_within(self, width: int, height: int) -> None:
        if self.x_max >= width or self.y_max >= height:
            raise ValueError(f"box {self} exceeds {width}x{height} grid")

    def as_mask(self, width: int, height: int) -> BinaryMask:
        """The filled box as a mask on a width x height grid."""
        self.validate_within(width, height)
        bits = np.zeros((height, width), dtype=bool)
        bits[self.y_min : self.y_max + 1, self.x_min : self.x_max + 1] = True
        return BinaryMask(bits)

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


@dataclass(frozen=True)
class RleMask:
    """Run-length wire encoding of a BinaryMask.

    Runs are row-major and alternate background/foreground, beginning with
    the count of leading background pixels, so the first run may be 0 and
    every later run must be >= 1.
    """

    width: int
    height: int
    runs: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "runs", tuple(int(r) for r in self.runs))
        if self.width < 1 or self.height < 1:
            raise MalformedEncodingError("RLE dimensions must be >= 1")
        if not self.runs:
            raise MalformedEncodingError("RLE needs at least one run")
        if self.runs[0] < 0:
            raise MalformedEncodingError("leading run must be >= 0")
        if any(r < 1 for r in self.runs[1:]):
            raise MalformedEncodingError("runs after the first must be >= 1")
        total = sum(self.runs)
        if total != self.width * self.height:
            raise MalformedEncodingError(
                f"run sum {total} != {self.width}x{self.height} = {self.width * self.height}"
            )


def encode_rle(mask: BinaryMask) -> RleMask:
    """Encode a mask into its unique canonical run-length form."""
    flat = mask.bits.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    runs = (ends - starts).tolist()
    if flat[0]:
        runs = [0] + runs
    return RleMask(mask.width, mask.height, tuple(runs))


def decode_rle(rle: RleMask) -> BinaryMask:
    """Inverse of encode_rle. Invariants are enforced by RleMask itself."""
    flat = np.zeros(rle.width * rle.height, dtype=bool)
    pos = 0
    fg = False
    for run in rle.runs:
        if fg:
            flat[pos : pos + run] = True
        pos += run
        fg = not fg
    return BinaryMask(flat.reshape(rle.height, rle.width))


def rle_to_json(rle: RleMask) -> dict:
    return {"w": rle.width, "h": rle.height, "runs": list(rle.runs)}


def rle_from_json(obj: dict) -> RleMask:
    try:
        w = int(obj["w"])
        h = int(obj["h"])
        runs = [int(r) for r in obj["runs"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedEncodingError(f"bad RLE object: {exc}") from exc
    return RleMask(w, h, tuple(runs))


def overlay(
    image: RasterImage,
    mask: BinaryMask,
    alpha: float,
    highlight: tuple[int, int, int] = DEFAULT_HIGHLIGHT,
) -> RasterImage:
    """Blend foreground pixels toward the highlight color by alpha.

    Background pixels pass through untouched. Grayscale images blend toward
    the highlight's rec601 luminance so the channel count is preserved.
    """
    if (image.width, image.height) != (mask.width, mask.height):
        raise DimensionMismatchError(
            f"image {image.width}x{image.height} vs mask {mask.width}x{mask.height}"
        )
    if not (0.0 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    px = image.pixels.astype(np.float64)
    if image.channels == 1:
        r, g, b = highlight
        target = 0.299 * r + 0.587 * g + 0.114 * b
    else:
        target = np.asarray(highlight, dtype=np.float64)
    blended = px * (1.0 - alpha) + target * alpha
    out = px.copy()
    out[mask.bits] = blended[mask.bits]
    return RasterImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


# ---------------------------------------------------------------------------
# PNG codecs. Masks: 8-bit single-channel, nonzero = foreground.
# ---------------------------------------------------------------------------


def image_to_png(image: RasterImage) -> bytes:
    mode = "L" if image.channels == 1 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(image.pixels, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def image_from_png(data: bytes) -> RasterImage:
    with Image.open(io.BytesIO(data)) as im:
        if im.mode not in ("L", "RGB"):
            raise ValueError(f"unsupported PNG mode {im.mode!r}; expected L or RGB")
        return RasterImage(np.asarray(im))


def mask_to_png(mask: BinaryMask) -> bytes:
    buf = io.BytesIO()
    arr = np.where(mask.bits, np.uint8(255), np.uint8(0))
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()


def mask_from_png(data: bytes) -> BinaryMask:
    with Image.open(io.BytesIO(data)) as im:
        if im.mode != "L":
            im = im.convert("L")
        return BinaryMask(np.asarray(im) != 0)


def load_image(path: str | Path) -> RasterImage:
    return image_from_png(Path(path).read_bytes())


def save_image(image: RasterImage, path: str | Path) -> None:
    Path(path).write_bytes(image_to_png(image))


def load_mask(path: str | Path) -> BinaryMask:
    return mask_from_png(Path(path).read_bytes())


def save_mask(mask: BinaryMask, path: str | Path) -> None:
    Path(path).write_bytes(mask_to_png(mask))
