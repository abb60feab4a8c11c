from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conceptseg.core import (
    BinaryMask,
    BoxPrompt,
    RasterImage,
    RleMask,
    decode_rle,
    encode_rle,
    image_from_png,
    image_to_png,
    mask_from_png,
    mask_to_png,
    overlay,
    rle_from_json,
    rle_to_json,
)
from conceptseg.errors import DimensionMismatchError, MalformedEncodingError

from conftest import make_image, mask_from_coords


class TestRle:
    def test_all_background_2x2(self):
        rle = encode_rle(BinaryMask.empty(2, 2))
        assert rle.runs == (4,)

    def test_all_foreground_2x2(self):
        rle = encode_rle(BinaryMask.full(2, 2))
        assert rle.runs == (0, 4)

    def test_single_pixel_2x2(self):
        # Pixel (x=1, y=0): row-major order is bg, fg, bg, bg.
        mask = mask_from_coords(2, 2, [(1, 0)])
        rle = encode_rle(mask)
        assert rle.runs == (1, 1, 2)

    def test_decode_examples(self):
        assert decode_rle(RleMask(2, 2, (4,))) == BinaryMask.empty(2, 2)
        assert decode_rle(RleMask(2, 2, (0, 4))) == BinaryMask.full(2, 2)
        assert decode_rle(RleMask(2, 2, (1, 1, 2))) == mask_from_coords(2, 2, [(1, 0)])

    def test_run_sum_mismatch_rejected(self):
        with pytest.raises(MalformedEncodingError):
            RleMask(2, 2, (5,))
        with pytest.raises(MalformedEncodingError):
            RleMask(2, 2, (1, 1, 1))

    def test_zero_interior_run_rejected(self):
        with pytest.raises(MalformedEncodingError):
            RleMask(2, 2, (1, 0, 3))

    def test_trailing_zero_rejected(self):
        with pytest.raises(MalformedEncodingError):
            RleMask(2, 2, (1, 3, 0))

    def test_negative_leading_run_rejected(self):
        with pytest.raises(MalformedEncodingError):
            RleMask(2, 2, (-1, 5))

    def test_json_round_trip(self):
        mask = mask_from_coords(5, 3, [(0, 0), (4, 2), (2, 1)])
        rle = encode_rle(mask)
        assert rle_from_json(rle_to_json(rle)) == rle
        assert rle_to_json(rle)["w"] == 5

    def test_bad_json_rejected(self):
        with pytest.raises(MalformedEncodingError):
            rle_from_json({"w": 2, "h": 2})

    @settings(max_examples=150, deadline=None)
    @given(
        width=st.integers(1, 24),
        height=st.integers(1, 24),
        seed=st.integers(0, 2**31),
        density=st.floats(0.0, 1.0),
    )
    def test_round_trip_identity(self, width, height, seed, density):
        rng = np.random.default_rng(seed)
        mask = BinaryMask(rng.random((height, width)) < density)
        assert decode_rle(encode_rle(mask)) == mask

    @settings(max_examples=60, deadline=None)
    @given(width=st.integers(1, 16), height=st.integers(1, 16), seed=st.integers(0, 2**31))
    def test_canonical_uniqueness(self, width, height, seed):
        rng = np.random.default_rng(seed)
        bits = rng.random((height, width)) < 0.4
        a = BinaryMask(bits)
        b = BinaryMask(bits.copy())
        assert encode_rle(a).runs == encode_rle(b).runs


class TestOverlay:
    def test_alpha_zero_is_identity(self):
        image = make_image(4, 4)
        mask = BinaryMask.full(4, 4)
        assert overlay(image, mask, 0.0) == image

    def test_empty_mask_is_identity(self):
        image = make_image(4, 4)
        assert overlay(image, BinaryMask.empty(4, 4), 0.7) == image

    def test_full_mask_alpha_one_is_highlight(self):
        image = make_image(4, 4)
        out = overlay(image, BinaryMask.full(4, 4), 1.0, highlight=(10, 20, 30))
        assert np.all(out.pixels == np.array([10, 20, 30], dtype=np.uint8))

    def test_background_untouched(self):
        image = make_image(6, 6, value=77)
        mask = mask_from_coords(6, 6, [(2, 2), (3, 3)])
        out = overlay(image, mask, 0.9)
        assert np.array_equal(out.pixels[~mask.bits], image.pixels[~mask.bits])

    def test_foreground_matches_blend_formula(self):
        image = make_image(5, 5, value=100)
        mask = mask_from_coords(5, 5, [(1, 1)])
        alpha = 0.25
        out = overlay(image, mask, alpha, highlight=(200, 0, 40))
        expected = np.rint(
            np.array([100, 100, 100]) * (1 - alpha) + np.array([200, 0, 40]) * alpha
        ).astype(np.uint8)
        assert np.array_equal(out.pixels[1, 1], expected)

    def test_grayscale_preserves_channels(self):
        image = RasterImage(np.full((3, 3), 50, dtype=np.uint8))
        out = overlay(image, BinaryMask.full(3, 3), 0.0)
        assert out.channels == 1
        assert out == image

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatchError):
            overlay(make_image(4, 4), BinaryMask.empty(5, 4), 0.5)

    def test_alpha_out_of_range(self):
        with pytest.raises(ValueError):
            overlay(make_image(2, 2), BinaryMask.empty(2, 2), 1.5)


class TestPngCodecs:
    def test_image_round_trip_rgb(self):
        rng = np.random.default_rng(7)
        image = RasterImage(rng.integers(0, 256, size=(9, 7, 3), dtype=np.uint8))
        assert image_from_png(image_to_png(image)) == image

    def test_image_round_trip_grayscale(self):
        rng = np.random.default_rng(8)
        image = RasterImage(rng.integers(0, 256, size=(5, 11), dtype=np.uint8))
        assert image_from_png(image_to_png(image)) == image

    def test_mask_round_trip(self):
        rng = np.random.default_rng(9)
        mask = BinaryMask(rng.random((13, 6)) < 0.5)
        assert mask_from_png(mask_to_png(mask)) == mask

    def test_mask_digest_stable_across_round_trip(self):
        mask = mask_from_coords(4, 4, [(0, 0), (3, 3)])
        assert mask_from_png(mask_to_png(mask)).digest() == mask.digest()


class TestBoxPrompt:
    def test_invalid_order_rejected(self):
        with pytest.raises(ValueError):
            BoxPrompt(3, 0, 2, 5)
        with pytest.raises(ValueError):
            BoxPrompt(-1, 0, 2, 5)

    def test_as_mask(self):
        box = BoxPrompt(1, 2, 3, 4)
        mask = box.as_mask(6, 6)
        assert mask.foreground_count == 3 * 3
        assert bool(mask.bits[2, 1]) and bool(mask.bits[4, 3])
        assert not mask.bits[1, 1]

    def test_validate_within(self):
        with pytest.raises(ValueError):
            BoxPrompt(0, 0, 6, 2).validate_within(6, 6)


class TestTypes:
    def test_mask_buffer_immutable(self):
        mask = BinaryMask.empty(3, 3)
        with pytest.raises(ValueError):
            mask.bits[0, 0] = True

    def test_image_shape_validation(self):
        with pytest.raises(ValueError):
            RasterImage(np.zeros((0, 4), dtype=np.uint8))
        with pytest.raises(ValueError):
            RasterImage(np.zeros((4, 4, 2), dtype=np.uint8))

    def test_mask_equality_and_digest(self):
        a = mask_from_coords(3, 3, [(1, 1)])
        b = mask_from_coords(3, 3, [(1, 1)])
        c = mask_from_coords(3, 3, [(0, 1)])
        assert a == b
        assert a.digest() == b.digest()
        assert a != c and a.digest() != c.digest()
