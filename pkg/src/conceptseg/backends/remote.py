"""HTTP client for real model servers speaking the segment wire protocol."""

from __future__ import annotations

import threading
import time
import uuid

import requests

from ..core import RasterImage
from ..errors import BackendError, MalformedResponseError, TransportError
from ..prompts import PromptBundle
from .base import SegmentationResult
from .replay import FixtureWriter
from .wire import (
    decode_mask_response,
    encode_image_payload,
    encode_prompt_payload,
    request_digest,
)

SEGMENT_PATH = "/v1/segment"


class RemoteBackend:
    """Client for POST {endpoint}/v1/segment.

    Transport failures and 5xx responses retry with exponential backoff up
    to max_retries, reusing the same request_id so the server can
    deduplicate. In-flight requests are bounded by max_in_flight.
    """

    def __init__(
        self,
        endpoint: str,
        *,
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff_base: float = 0.25,
        max_in_flight: int = 8,
        recorder: FixtureWriter | None = None,
        backend_id: str | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.recorder = recorder
        self.backend_id = backend_id or f"remote:{self.endpoint}"
        self._gate = threading.BoundedSemaphore(max_in_flight)

    def _post(self, payload: dict) -> requests.Response:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base * (2 ** (attempt - 1)))
            try:
                resp = requests.post(
                    self.endpoint + SEGMENT_PATH, json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = BackendError(f"server error {resp.status_code}: {resp.text[:200]}")
                continue
            return resp
        raise TransportError(f"{self.endpoint}: retries exhausted ({last_exc})")

    def segment(self, image: RasterImage, prompt: PromptBundle) -> SegmentationResult:
        image_payload = encode_image_payload(image)
        prompt_payload = encode_prompt_payload(prompt)
        payload = {
            "request_id": str(uuid.uuid4()),
            "image": image_payload,
            "prompt": prompt_payload,
        }
        started = time.monotonic()
        with self._gate:
            resp = self._post(payload)
        latency_ms = (time.monotonic() - started) * 1000.0
        if resp.status_code != 200:
            try:
                detail = resp.json().get("error", resp.text[:200])
            except ValueError:
                detail = resp.text[:200]
            raise BackendError(f"{self.endpoint} returned {resp.status_code}: {detail}")
        try:
            body = resp.json()
        except ValueError as exc:
            raise MalformedResponseError(f"response is not JSON: {exc}") from exc
        mask, confidence, model_id = decode_mask_response(body, (image.width, image.height))
        if self.recorder is not None:
            self.recorder.write(request_digest(image_payload, prompt_payload), body)
        return SegmentationResult(
            mask=mask, confidence=confidence, backend_id=model_id, latency_ms=latency_ms
        )
