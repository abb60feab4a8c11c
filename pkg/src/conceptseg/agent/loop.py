"""The agent refinement loop: plan, segment, inspect, repeat within a budget.

Each round sends the conversation so far to the planner and parses exactly
one action back. SET_PHRASE / SET_BOX mutate the working prompt (they
accumulate, so a phrase followed by a box escalates text-only prompting to
text-plus-box) and trigger exactly one backend call; ACCEPT fixes the
latest mask as final; REJECT_NO_TARGET ends the session with no masks.
When the budget runs out the best-confidence mask seen is finalized.

Ground truth never enters the loop: feedback derives solely from the
image, the prediction, and the backend's confidence, and transcripts
record every attachment digest so this can be audited after the fact.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..core import BinaryMask, BoxPrompt, RasterImage, mask_to_png, overlay
from ..errors import ActionParseError, BackendError
from ..prompts import (
    ConceptPhrase,
    PromptBundle,
    PromptMode,
    count_components,
    mask_bbox,
    validate_phrase,
)
from .actions import ActionKind, AgentAction, parse_action
from .mllm import Attachment, Message, MllmClient, MllmExchange

DEFAULT_BUDGET = 3
DEFAULT_OVERLAY_ALPHA = 0.5

DEFAULT_SYSTEM_CONTRACT = """\
You refine prompts for a segmentation tool over a single image.
Reply with exactly one JSON object and nothing else:
  {"action": "SET_PHRASE", "phrase": "<at most three words>", "rationale": "..."}
  {"action": "SET_BOX", "box": {"x_min": 0, "y_min": 0, "x_max": 0, "y_max": 0}, "rationale": "..."}
  {"action": "ACCEPT", "rationale": "..."}
  {"action": "REJECT_NO_TARGET", "rationale": "..."}
SET_PHRASE and SET_BOX update the working prompt and run the tool once;
you then receive an overlay image and textual feedback. ACCEPT keeps the
latest mask. REJECT_NO_TARGET declares that no valid mask exists."""

_REASK_TEXT = (
    "Your reply must contain exactly one JSON object of the documented "
    "form. Reply again with only that object."
)


@dataclass(frozen=True)
class FeedbackText:
    """GT-free textual digest of one segmentation result."""

    mask_area_fraction: float
    component_count: int
    bbox: BoxPrompt | None
    confidence: float
    round_index: int

    def __post_init__(self):
        if self.round_index < 1:
            raise ValueError("round_index must be >= 1")
        if not 0.0 <= self.mask_area_fraction <= 1.0:
            raise ValueError("mask_area_fraction outside [0, 1]")


@dataclass(frozen=True)
class FeedbackPacket:
    overlay: RasterImage
    textual: FeedbackText


def build_feedback(
    image: RasterImage,
    result,
    round_index: int,
    overlay_alpha: float = DEFAULT_OVERLAY_ALPHA,
) -> FeedbackPacket:
    """Visual + textual feedback for one result; derives only from the prediction."""
    mask = result.mask
    textual = FeedbackText(
        mask_area_fraction=mask.foreground_count / (mask.width * mask.height),
        component_count=count_components(mask, connectivity=8),
        bbox=mask_bbox(mask),
        confidence=result.confidence,
        round_index=round_index,
    )
    return FeedbackPacket(overlay=overlay(image, mask, overlay_alpha), textual=textual)


def feedback_message_text(fb: FeedbackText) -> str:
    bbox = "none" if fb.bbox is None else (
        f"({fb.bbox.x_min},{fb.bbox.y_min},{fb.bbox.x_max},{fb.bbox.y_max})"
    )
    return (
        f"round {fb.round_index} feedback\n"
        f"mask_area_fraction={fb.mask_area_fraction:.6f}\n"
        f"component_count={fb.component_count}\n"
        f"bbox={bbox}\n"
        f"confidence={fb.confidence:.4f}"
    )


class Termination(enum.Enum):
    ACCEPTED = "ACCEPTED"
    NO_TARGET = "NO_TARGET"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"


@dataclass(frozen=True)
class AgentRound:
    index: int
    action: AgentAction | None
    prompt_mode: str | None
    prompt_phrase: str | None
    prompt_box: tuple[int, int, int, int] | None
    result_digest: str | None
    confidence: float | None
    feedback: FeedbackText | None
    overlay_digest: str | None
    error: str | None = None


@dataclass
class AgentTranscript:
    """Replayable record of one agent session."""

    user_query: str
    image_digest: str
    budget: int
    rounds: list[AgentRound]
    termination: Termination
    final_masks: tuple[BinaryMask, ...]
    notes: list[str] = field(default_factory=list)
    mllm_attachment_digests: tuple[str, ...] = ()
    message_log: list[dict] = field(default_factory=list)

    def validate(self) -> None:
        if len(self.rounds) > self.budget:
            raise ValueError(f"{len(self.rounds)} rounds exceed budget {self.budget}")
        if self.termination is Termination.NO_TARGET:
            if self.final_masks:
                raise ValueError("NO_TARGET sessions must return no masks")
        elif not self.final_masks:
            raise ValueError(f"{self.termination.value} sessions must return masks")

    def to_doc(self) -> dict:
        return {
            "user_query": self.user_query,
            "image_digest": self.image_digest,
            "budget": self.budget,
            "termination": self.termination.value,
            "final_mask_digests": [m.digest() for m in self.final_masks],
            "notes": list(self.notes),
            "mllm_attachment_digests": list(self.mllm_attachment_digests),
            "message_log": self.message_log,
            "rounds": [
                {
                    "index": r.index,
                    "action": json.loads(r.action.to_json()) if r.action else None,
                    "prompt_mode": r.prompt_mode,
                    "prompt_phrase": r.prompt_phrase,
                    "prompt_box": list(r.prompt_box) if r.prompt_box else None,
                    "result_digest": r.result_digest,
                    "confidence": r.confidence,
                    "feedback": (
                        {
                            "mask_area_fraction": r.feedback.mask_area_fraction,
                            "component_count": r.feedback.component_count,
                            "bbox": list(r.feedback.bbox.as_tuple()) if r.feedback.bbox else None,
                            "confidence": r.feedback.confidence,
                            "round_index": r.feedback.round_index,
                        }
                        if r.feedback
                        else None
                    ),
                    "overlay_digest": r.overlay_digest,
                    "error": r.error,
                }
                for r in self.rounds
            ],
        }


def _derive_bundle(phrase: ConceptPhrase | None, box: BoxPrompt | None) -> PromptBundle:
    if phrase is not None and box is not None:
        return PromptBundle(PromptMode.TEXT_BOX, phrase=phrase, box=box)
    if phrase is not None:
        return PromptBundle(PromptMode.TEXT, phrase=phrase)
    return PromptBundle(PromptMode.BOX, box=box)


class _SessionAbort(Exception):
    def __init__(self, note: str):
        super().__init__(note)
        self.note = note


def _next_action(
    mllm_client: MllmClient,
    messages: list[Message],
    have_result: bool,
    image_size: tuple[int, int],
) -> AgentAction:
    """One planner exchange with a single corrective re-ask on bad replies.

    A bad reply is anything unparseable, an ACCEPT before any mask exists,
    or a box outside the image. Transport failures propagate: there is no
    session to salvage without a planner.
    """
    for attempt in range(2):
        exchange = MllmExchange(tuple(messages))
        raw = mllm_client.complete(exchange.messages)
        messages.append(Message("assistant", raw))
        complaint = None
        action = None
        try:
            action = parse_action(raw)
        except ActionParseError as exc:
            complaint = f"unparseable action: {exc}"
        if action is not None and action.kind is ActionKind.ACCEPT and not have_result:
            complaint = "ACCEPT with no mask produced yet"
        if action is not None and action.box is not None:
            try:
                action.box.validate_within(*image_size)
            except ValueError as exc:
                complaint = f"box outside the image: {exc}"
        if complaint is None:
            return action
        if attempt == 0:
            messages.append(Message("user", f"{complaint}. {_REASK_TEXT}"))
            continue
        raise _SessionAbort(f"{complaint} (after re-ask)")
    raise AssertionError("unreachable")


def run_agent(
    image: RasterImage,
    user_query: str,
    backend,
    mllm_client: MllmClient,
    budget: int = DEFAULT_BUDGET,
    overlay_alpha: float = DEFAULT_OVERLAY_ALPHA,
    system_contract: str = DEFAULT_SYSTEM_CONTRACT,
) -> AgentTranscript:
    """Run one agent session and return its full transcript.

    Round accounting: every parsed action consumes one round; mutating
    rounds make exactly one backend call, ACCEPT/REJECT rounds make none.
    Budget exhaustion finalizes the best-confidence mask seen (earliest on
    ties); an errored session finalizes the same way with the error noted.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    messages: list[Message] = [
        Message("system", system_contract),
        Message("user", f"request: {user_query}", (Attachment.from_image(image),)),
    ]
    rounds: list[AgentRound] = []
    notes: list[str] = []
    results: list[tuple[int, object]] = []  # (round index, SegmentationResult)
    phrase: ConceptPhrase | None = None
    box: BoxPrompt | None = None
    termination: Termination | None = None

    for round_index in range(1, budget + 1):
        try:
            action = _next_action(
                mllm_client, messages, bool(results), (image.width, image.height)
            )
        except _SessionAbort as abort:
            notes.append(abort.note)
            rounds.append(
                AgentRound(round_index, None, None, None, None, None, None, None, None,
                           error=abort.note)
            )
            termination = Termination.BUDGET_EXHAUSTED
            break

        if action.kind is ActionKind.ACCEPT:
            rounds.append(
                AgentRound(round_index, action, None, None, None, None, None, None, None)
            )
            termination = Termination.ACCEPTED
            break
        if action.kind is ActionKind.REJECT_NO_TARGET:
            rounds.append(
                AgentRound(round_index, action, None, None, None, None, None, None, None)
            )
            termination = Termination.NO_TARGET
            break

        if action.kind is ActionKind.SET_PHRASE:
            phrase = action.phrase
        else:
            box = action.box
        bundle = _derive_bundle(phrase, box)
        prompt_state = (
            bundle.mode.value,
            bundle.phrase.text if bundle.phrase else None,
            bundle.box.as_tuple() if bundle.box else None,
        )
        try:
            result = backend.segment(image, bundle)
        except BackendError as exc:
            messages.append(Message("user", f"round {round_index} failed: {exc}"))
            rounds.append(
                AgentRound(round_index, action, *prompt_state, None, None, None, None,
                           error=str(exc))
            )
            continue
        packet = build_feedback(image, result, round_index, overlay_alpha)
        overlay_attachment = Attachment.from_image(packet.overlay)
        messages.append(
            Message("user", feedback_message_text(packet.textual), (overlay_attachment,))
        )
        rounds.append(
            AgentRound(
                round_index,
                action,
                *prompt_state,
                result.mask.digest(),
                result.confidence,
                packet.textual,
                overlay_attachment.digest,
            )
        )
        results.append((round_index, result))

    if termination is None:
        termination = Termination.BUDGET_EXHAUSTED

    if termination is Termination.ACCEPTED:
        final_masks: tuple[BinaryMask, ...] = (results[-1][1].mask,)
    elif termination is Termination.NO_TARGET:
        final_masks = ()
    elif results:
        best_round, best_result = max(results, key=lambda item: (item[1].confidence, -item[0]))
        final_masks = (best_result.mask,)
        notes.append(
            f"budget exhausted: finalized round {best_round} "
            f"(best confidence {best_result.confidence:.4f})"
        )
    else:
        final_masks = (BinaryMask.empty(image.width, image.height),)
        notes.append("no segmentation produced; finalized an empty mask")

    attachment_digests = tuple(
        attachment.digest for message in messages for attachment in message.attachments
    )
    transcript = AgentTranscript(
        user_query=user_query,
        image_digest=image.digest(),
        budget=budget,
        rounds=rounds,
        termination=termination,
        final_masks=final_masks,
        notes=notes,
        mllm_attachment_digests=attachment_digests,
        message_log=[
            {
                "role": m.role,
                "text": m.text,
                "attachments": [a.digest for a in m.attachments],
            }
            for m in messages
        ],
    )
    transcript.validate()
    return transcript


def run_agent_sessions(
    image: RasterImage,
    target_queries: Sequence[str],
    backend,
    mllm_factory,
    budget: int = DEFAULT_BUDGET,
    overlay_alpha: float = DEFAULT_OVERLAY_ALPHA,
    system_contract: str = DEFAULT_SYSTEM_CONTRACT,
) -> AgentTranscript:
    """Sequential single-target sessions sharing one transcript.

    A request naming several targets runs one session per target, each with
    its own fresh planner and an independent budget; the returned mask set
    is the union over sessions. Termination is NO_TARGET only when every
    session rejected; otherwise BUDGET_EXHAUSTED if any session ran out,
    else ACCEPTED.
    """
    if not target_queries:
        raise ValueError("at least one target query required")
    sessions = [
        run_agent(image, query, backend, mllm_factory(), budget, overlay_alpha, system_contract)
        for query in target_queries
    ]
    rounds: list[AgentRound] = []
    notes: list[str] = []
    final_masks: list[BinaryMask] = []
    attachment_digests: list[str] = []
    message_log: list[dict] = []
    offset = 0
    for query, session in zip(target_queries, sessions):
        notes.append(
            f"session {query!r}: budget {session.budget}, "
            f"termination {session.termination.value}"
        )
        notes.extend(session.notes)
        for r in session.rounds:
            rounds.append(
                AgentRound(
                    offset + r.index, r.action, r.prompt_mode, r.prompt_phrase,
                    r.prompt_box, r.result_digest, r.confidence, None if r.feedback is None
                    else FeedbackText(
                        r.feedback.mask_area_fraction, r.feedback.component_count,
                        r.feedback.bbox, r.feedback.confidence, offset + r.index,
                    ),
                    r.overlay_digest, r.error,
                )
            )
        offset += session.budget
        final_masks.extend(session.final_masks)
        attachment_digests.extend(session.mllm_attachment_digests)
        message_log.extend(session.message_log)
    if all(s.termination is Termination.NO_TARGET for s in sessions):
        termination = Termination.NO_TARGET
    elif any(s.termination is Termination.BUDGET_EXHAUSTED for s in sessions):
        termination = Termination.BUDGET_EXHAUSTED
    else:
        termination = Termination.ACCEPTED
    transcript = AgentTranscript(
        user_query=" | ".join(target_queries),
        image_digest=image.digest(),
        budget=budget * len(sessions),
        rounds=rounds,
        termination=termination,
        final_masks=tuple(final_masks),
        notes=notes,
        mllm_attachment_digests=tuple(attachment_digests),
        message_log=message_log,
    )
    transcript.validate()
    return transcript


# ---------------------------------------------------------------------------
# Persistence and replay
# ---------------------------------------------------------------------------


def save_transcript(
    transcript: AgentTranscript,
    out_dir: str | Path,
    name: str,
    attachments: Sequence[Attachment] = (),
) -> Path:
    """Write transcript JSON plus content-addressed blobs for the masks."""
    out_dir = Path(out_dir)
    blob_dir = out_dir / "blobs"
    blob_dir.mkdir(parents=True, exist_ok=True)
    for mask in transcript.final_masks:
        png = mask_to_png(mask)
        (blob_dir / f"{mask.digest()}.png").write_bytes(png)
    for attachment in attachments:
        (blob_dir / f"{attachment.digest}.png").write_bytes(attachment.png)
    path = out_dir / f"{name}.json"
    path.write_text(json.dumps(transcript.to_doc(), indent=2) + "\n")
    return path


def replay_transcript(
    transcript_doc: dict, image: RasterImage, backend
) -> list[tuple[int, str, str, bool]]:
    """Re-run each recorded mutating round against a backend.

    Returns (round index, recorded digest, replayed digest, match) per
    round; against the same pure backend every digest must match.
    """
    comparisons = []
    for round_doc in transcript_doc["rounds"]:
        if round_doc["result_digest"] is None:
            continue
        phrase = (
            validate_phrase(round_doc["prompt_phrase"]) if round_doc["prompt_phrase"] else None
        )
        box = BoxPrompt(*round_doc["prompt_box"]) if round_doc["prompt_box"] else None
        result = backend.segment(image, _derive_bundle(phrase, box))
        replayed = result.mask.digest()
        comparisons.append(
            (
                round_doc["index"],
                round_doc["result_digest"],
                replayed,
                replayed == round_doc["result_digest"],
            )
        )
    return comparisons
