"""JSON wire codecs shared by the remote client and the replay fixtures.

Request body for POST /v1/segment:

    {"request_id": "<uuid>",
     "image": {"w": int, "h": int, "channels": int, "png_b64": str},
     "prompt": {"mode": "TEXT"|"TEXT_BOX"|"BOX",
                "phrase"?: str,
                "box"?: {"x_min", "y_min", "x_max", "y_max",
                         "coords": "inclusive-pixel"}}}

200 response: {"mask": {"w", "h", "runs"}, "confidence": float,
"model_id": str}. Non-200 bodies carry {"error": str}. A response may also
carry an "instances" array; it is reserved and ignored, and only the
single top mask is consumed.
"""

from __future__ import annotations

import base64
import hashlib
import json

from ..core import (
    BinaryMask,
    BoxPrompt,
    RasterImage,
    decode_rle,
    image_from_png,
    image_to_png,
    rle_from_json,
    rle_to_json,
    encode_rle,
)
from ..errors import MalformedEncodingError, MalformedResponseError
from ..prompts import PromptBundle, PromptMode, validate_phrase


def encode_image_payload(image: RasterImage) -> dict:
    return {
        "w": image.width,
        "h": image.height,
        "channels": image.channels,
        "png_b64": base64.b64encode(image_to_png(image)).decode("ascii"),
    }


def decode_image_payload(payload: dict) -> RasterImage:
    image = image_from_png(base64.b64decode(payload["png_b64"]))
    if (image.width, image.height, image.channels) != (
        payload["w"],
        payload["h"],
        payload["channels"],
    ):
        raise MalformedResponseError("image payload dimensions disagree with PNG content")
    return image


def encode_box_payload(box: BoxPrompt) -> dict:
    return {
        "x_min": box.x_min,
        "y_min": box.y_min,
        "x_max": box.x_max,
        "y_max": box.y_max,
        "coords": "inclusive-pixel",
    }


def decode_box_payload(payload: dict) -> BoxPrompt:
    return BoxPrompt(
        int(payload["x_min"]), int(payload["y_min"]),
        int(payload["x_max"]), int(payload["y_max"]),
    )


def encode_prompt_payload(prompt: PromptBundle) -> dict:
    payload: dict = {"mode": prompt.mode.value}
    if prompt.phrase is not None:
        payload["phrase"] = prompt.phrase.text
    if prompt.box is not None:
        payload["box"] = encode_box_payload(prompt.box)
    return payload


def decode_prompt_payload(payload: dict) -> PromptBundle:
    mode = PromptMode(payload["mode"])
    phrase = validate_phrase(payload["phrase"]) if "phrase" in payload else None
    box = decode_box_payload(payload["box"]) if "box" in payload else None
    return PromptBundle(mode, phrase=phrase, box=box)


def request_digest(image_payload: dict, prompt_payload: dict) -> str:
    """Digest of request content, excluding the per-send request_id.

    Retries and replays key on this, so identical (image, prompt) pairs hit
    the same fixture record.
    """
    canonical = json.dumps(
        {"image": image_payload, "prompt": prompt_payload},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(canonical.encode()).hexdigest()


def encode_mask_response(mask: BinaryMask, confidence: float, model_id: str) -> dict:
    return {
        "mask": rle_to_json(encode_rle(mask)),
        "confidence": confidence,
        "model_id": model_id,
    }


def decode_mask_response(
    body: dict, expected_size: tuple[int, int]
) -> tuple[BinaryMask, float, str]:
    """Validate and decode a 200 response body into (mask, confidence, model_id)."""
    if not isinstance(body, dict):
        raise MalformedResponseError(f"response must be an object, got {type(body).__name__}")
    for key in ("mask", "confidence", "model_id"):
        if key not in body:
            raise MalformedResponseError(f"response missing {key!r}")
    try:
        mask = decode_rle(rle_from_json(body["mask"]))
    except MalformedEncodingError as exc:
        raise MalformedResponseError(f"bad mask encoding: {exc}") from exc
    if (mask.width, mask.height) != expected_size:
        raise MalformedResponseError(
            f"mask {mask.width}x{mask.height} does not match request "
            f"image {expected_size[0]}x{expected_size[1]}"
        )
    try:
        confidence = float(body["confidence"])
    except (TypeError, ValueError) as exc:
        raise MalformedResponseError(f"bad confidence: {body['confidence']!r}") from exc
    if not 0.0 <= confidence <= 1.0:
        raise MalformedResponseError(f"confidence {confidence} outside [0, 1]")
    model_id = body["model_id"]
    if not isinstance(model_id, str) or not model_id:
        raise MalformedResponseError(f"bad model_id: {model_id!r}")
    return mask, confidence, model_id
