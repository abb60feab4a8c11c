"""Planner actions and the strict single-JSON-object reply grammar."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from ..core import BoxPrompt
from ..errors import ActionParseError, PhraseError
from ..prompts import ConceptPhrase, validate_phrase


class ActionKind(enum.Enum):
    SET_PHRASE = "SET_PHRASE"
    SET_BOX = "SET_BOX"
    ACCEPT = "ACCEPT"
    REJECT_NO_TARGET = "REJECT_NO_TARGET"


@dataclass(frozen=True)
class AgentAction:
    kind: ActionKind
    phrase: ConceptPhrase | None = None
    box: BoxPrompt | None = None
    rationale: str = ""

    def __post_init__(self):
        if self.kind is ActionKind.SET_PHRASE and self.phrase is None:
            raise ValueError("SET_PHRASE requires a phrase")
        if self.kind is ActionKind.SET_BOX and self.box is None:
            raise ValueError("SET_BOX requires a box")
        if self.kind in (ActionKind.ACCEPT, ActionKind.REJECT_NO_TARGET):
            if self.phrase is not None or self.box is not None:
                raise ValueError(f"{self.kind.value} must not carry a phrase or box")

    def to_json(self) -> str:
        obj: dict = {"action": self.kind.value, "rationale": self.rationale}
        if self.phrase is not None:
            obj["phrase"] = self.phrase.text
        if self.box is not None:
            obj["box"] = {
                "x_min": self.box.x_min,
                "y_min": self.box.y_min,
                "x_max": self.box.x_max,
                "y_max": self.box.y_max,
            }
        return json.dumps(obj)


_ALLOWED_KEYS = {"action", "phrase", "box", "rationale"}
_BOX_KEYS = {"x_min", "y_min", "x_max", "y_max"}


def _extract_json_objects(text: str) -> list[dict]:
    """Top-level JSON objects embedded anywhere in free text.

    Nested objects inside a parsed one do not count separately: the scan
    resumes after each successful parse.
    """
    decoder = json.JSONDecoder()
    found: list[dict] = []
    i = 0
    while i < len(text):
        if text[i] == "{":
            try:
                obj, end = decoder.raw_decode(text, i)
            except ValueError:
                i += 1
                continue
            found.append(obj)
            i = end
        else:
            i += 1
    return found


def parse_action(raw: str) -> AgentAction:
    """Parse a planner reply into exactly one validated action.

    The reply must contain exactly one JSON object, shaped
    {"action", "phrase"?, "box"?, "rationale"}; anything else is a parse
    error (the loop re-asks once before giving up).
    """
    objects = _extract_json_objects(raw)
    if len(objects) == 0:
        raise ActionParseError("reply contains no JSON object")
    if len(objects) > 1:
        raise ActionParseError(f"reply contains {len(objects)} JSON objects, expected 1")
    obj = objects[0]
    extra = set(obj) - _ALLOWED_KEYS
    if extra:
        raise ActionParseError(f"unknown keys {sorted(extra)}")
    if "action" not in obj or "rationale" not in obj:
        raise ActionParseError("action object requires 'action' and 'rationale'")
    try:
        kind = ActionKind(obj["action"])
    except ValueError as exc:
        raise ActionParseError(f"unknown action {obj['action']!r}") from exc
    phrase = None
    if "phrase" in obj:
        try:
            phrase = validate_phrase(obj["phrase"])
        except PhraseError as exc:
            raise ActionParseError(f"invalid phrase: {exc}") from exc
    box = None
    if "box" in obj:
        box_obj = obj["box"]
        if not isinstance(box_obj, dict) or set(box_obj) != _BOX_KEYS:
            raise ActionParseError(f"box must have exactly keys {sorted(_BOX_KEYS)}")
        try:
            box = BoxPrompt(
                int(box_obj["x_min"]), int(box_obj["y_min"]),
                int(box_obj["x_max"]), int(box_obj["y_max"]),
            )
        except (TypeError, ValueError) as exc:
            raise ActionParseError(f"invalid box: {exc}") from exc
    rationale = obj["rationale"]
    if not isinstance(rationale, str):
        raise ActionParseError("rationale must be a string")
    try:
        return AgentAction(kind=kind, phrase=phrase, box=box, rationale=rationale)
    except ValueError as exc:
        raise ActionParseError(str(exc)) from exc
