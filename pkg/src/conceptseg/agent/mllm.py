"""Planner client boundary: message structures, scripted mocks, HTTP adapter.

A planner client receives the ordered conversation (text plus PNG
attachments) and returns free text that must parse to exactly one action.
The scripted mocks and the live chat-completions adapter share this
boundary, so the loop cannot tell them apart.
"""

from __future__ import annotations

import base64
import hashlib
import re
import threading
from dataclasses import dataclass
from typing import Protocol, Sequence

import requests

from ..core import BoxPrompt, RasterImage, image_to_png
from ..errors import MllmTransportError
from .actions import ActionKind, AgentAction
from ..prompts import ConceptPhrase, validate_phrase


@dataclass(frozen=True)
class Attachment:
    """A PNG image attachment, addressed by the digest of its bytes."""

    png: bytes
    digest: str

    @classmethod
    def from_png(cls, png: bytes) -> "Attachment":
        return cls(png=png, digest=hashlib.sha256(png).hexdigest())

    @classmethod
    def from_image(cls, image: RasterImage) -> "Attachment":
        return cls.from_png(image_to_png(image))


@dataclass(frozen=True)
class Message:
    role: str  # "system" | "user" | "assistant"
    text: str
    attachments: tuple[Attachment, ...] = ()

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class MllmExchange:
    """An ordered conversation whose first message is the system contract."""

    messages: tuple[Message, ...]

    def __post_init__(self):
        if not self.messages or self.messages[0].role != "system":
            raise ValueError("first message must be the system contract")


class MllmClient(Protocol):
    def complete(self, messages: Sequence[Message]) -> str:
        ...


class ScriptedMllm:
    """Replays a fixed list of replies, one per call. For tests and demos."""

    def __init__(self, replies: Sequence[str | AgentAction]):
        self._replies = [
            r.to_json() if isinstance(r, AgentAction) else r for r in replies
        ]
        self._index = 0
        self._lock = threading.Lock()

    def complete(self, messages: Sequence[Message]) -> str:
        with self._lock:
            if self._index >= len(self._replies):
                raise MllmTransportError("scripted planner ran out of replies")
            reply = self._replies[self._index]
            self._index += 1
            return reply


_ROUND_MARKER = re.compile(r"^round \d+ (feedback|failed)", re.MULTILINE)
_CONFIDENCE_LINE = re.compile(r"^confidence=([0-9.]+)$", re.MULTILINE)


class AcceptIfImprovedMllm:
    """Deterministic refinement policy over a candidate ladder.

    Tries candidates (phrases or boxes) in order, reading confidences back
    out of the textual feedback. It ACCEPTs only when at least two rounds
    have completed and the latest confidence strictly exceeds every earlier
    round's; a lone first round never self-certifies. When the ladder is
    exhausted without improvement it re-proposes the best-confidence
    candidate and lets budget exhaustion finalize it.

    The policy is stateless across calls: everything derives from the
    conversation, so concurrent sessions can share one instance.
    """

    def __init__(self, candidates: Sequence[str | BoxPrompt]):
        if not candidates:
            raise ValueError("candidate ladder must not be empty")
        self.candidates: list[ConceptPhrase | BoxPrompt] = [
            validate_phrase(c) if isinstance(c, str) else c for c in candidates
        ]

    def _propose(self, index: int) -> str:
        candidate = self.candidates[index]
        if isinstance(candidate, BoxPrompt):
            action = AgentAction(
                ActionKind.SET_BOX, box=candidate,
                rationale=f"trying candidate box {index + 1}",
            )
        else:
            action = AgentAction(
                ActionKind.SET_PHRASE, phrase=candidate,
                rationale=f"trying candidate phrase {index + 1}",
            )
        return action.to_json()

    def complete(self, messages: Sequence[Message]) -> str:
        feedback_text = "\n".join(m.text for m in messages if m.role == "user")
        attempts = len(_ROUND_MARKER.findall(feedback_text))
        confidences = [float(c) for c in _CONFIDENCE_LINE.findall(feedback_text)]
        if attempts == 0:
            return self._propose(0)
        if len(confidences) >= 2 and confidences[-1] > max(confidences[:-1]):
            return AgentAction(
                ActionKind.ACCEPT,
                rationale=f"confidence rose to {confidences[-1]:.4f}",
            ).to_json()
        if attempts < len(self.candidates):
            return self._propose(attempts)
        best = max(range(len(confidences)), key=lambda i: confidences[i]) if confidences else 0
        return self._propose(min(best, len(self.candidates) - 1))


class HttpMllm:
    """Adapter for a chat-completions-style HTTP endpoint.

    Attachments ride along as data-URL image parts. Exercised only in
    optional recorded integration runs; unit tests use the mocks.
    """

    def __init__(self, endpoint: str, *, model: str = "default", timeout: float = 60.0):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.timeout = timeout

    def _encode_message(self, message: Message) -> dict:
        if not message.attachments:
            return {"role": message.role, "content": message.text}
        parts: list[dict] = [{"type": "text", "text": message.text}]
        for attachment in message.attachments:
            b64 = base64.b64encode(attachment.png).decode("ascii")
            parts.append(
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
            )
        return {"role": message.role, "content": parts}

    def complete(self, messages: Sequence[Message]) -> str:
        body = {
            "model": self.model,
            "messages": [self._encode_message(m) for m in messages],
        }
        try:
            resp = requests.post(
                self.endpoint + "/v1/chat/completions", json=body, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise MllmTransportError(f"{self.endpoint}: {exc}") from exc
        if resp.status_code != 200:
            raise MllmTransportError(f"{self.endpoint} returned {resp.status_code}")
        try:
            return resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MllmTransportError(f"unexpected completion payload: {exc}") from exc
