"""Record/replay fixtures: JSON lines of {"request_digest", "response"}.

A replay backend loaded with a remote backend's recorded traffic must be a
drop-in substitute for it: the decode path is shared, so masks, confidences
and model ids come back bit-identical (latency is a measurement, not part
of the payload, and is not replayed).
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from ..core import RasterImage
from ..errors import ReplayMissError
from ..prompts import PromptBundle
from .base import SegmentationResult
from .wire import (
    decode_mask_response,
    encode_image_payload,
    encode_mask_response,
    encode_prompt_payload,
    request_digest,
)


class FixtureWriter:
    """Append-only JSONL fixture writer, safe for concurrent backends."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._seen: set[str] = set()

    def write(self, digest: str, response: dict) -> None:
        with self._lock:
            if digest in self._seen:
                return
            self._seen.add(digest)
            with self.path.open("a") as fh:
                fh.write(json.dumps({"request_digest": digest, "response": response}) + "\n")


def load_fixture(path: str | Path) -> dict[str, dict]:
    records: dict[str, dict] = {}
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        entry = json.loads(line)
        records[entry["request_digest"]] = entry["response"]
    return records


class ReplayBackend:
    """Serves recorded responses keyed by request digest; fully offline."""

    def __init__(self, fixture: str | Path | dict[str, dict], backend_id: str = "replay"):
        self._records = fixture if isinstance(fixture, dict) else load_fixture(fixture)
        self.backend_id = backend_id

    def segment(self, image: RasterImage, prompt: PromptBundle) -> SegmentationResult:
        digest = request_digest(encode_image_payload(image), encode_prompt_payload(prompt))
        body = self._records.get(digest)
        if body is None:
            raise ReplayMissError(f"no recorded response for digest {digest[:16]}…")
        mask, confidence, model_id = decode_mask_response(body, (image.width, image.height))
        return SegmentationResult(mask=mask, confidence=confidence, backend_id=model_id)


class RecordingBackend:
    """Wraps any backend and records its traffic in wire form.

    Useful for capturing pure in-process backends as fixtures; the remote
    client records its own raw responses instead (see RemoteBackend).
    """

    def __init__(self, inner, writer: FixtureWriter):
        self.inner = inner
        self.writer = writer
        self.backend_id = inner.backend_id

    def segment(self, image: RasterImage, prompt: PromptBundle) -> SegmentationResult:
        result = self.inner.segment(image, prompt)
        digest = request_digest(encode_image_payload(image), encode_prompt_payload(prompt))
        self.writer.write(
            digest,
            encode_mask_response(result.mask, result.confidence, result.backend_id),
        )
        return result
