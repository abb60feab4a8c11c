"""End-to-end evaluation runs: one backend call per (case, target, frame).

Prompt construction per mode:

- TEXT: the target's concept phrase only.
- TEXT_BOX: the phrase plus a box around the largest connected component
  of that frame's GT. Each frame derives its own box; there is no
  cross-frame propagation.
- BOX: the GT-derived box only.

Units with an empty GT have no derivable box, so TEXT_BOX and BOX skip
them (and log the skip). TEXT skips them too unless negative-frame scoring
is enabled, in which case the both-empty Dice convention applies. Skipped
and failed units are excluded from means but always reported; silent
exclusion is forbidden.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import jsonschema

from .backends.base import check_result_dims
from .datasets import DatasetManifest, EvalUnit, Split, iter_eval_units
from .errors import BackendError, ConfigError
from .metrics import CONVENTION_NOTES, EvalRow, dice_counts, dice_from_counts
from .prompts import PromptBundle, PromptMode, largest_component_box


@dataclass(frozen=True)
class RunSpec:
    """Everything one evaluation run depends on."""

    method_id: str
    prompt_mode: PromptMode
    backend: object  # SegmentationBackend
    manifest: DatasetManifest
    split: Split = Split.TEST
    connectivity: int = 8
    seed: int = 0
    negative_frames: bool = False
    jobs: int = 1

    def __post_init__(self):
        if self.split not in (Split.TRAIN, Split.TEST):
            raise ConfigError(f"split must be train or test, got {self.split}")
        if self.connectivity not in (4, 8):
            raise ConfigError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        supported = getattr(self.backend, "supported_modes", None)
        if supported is not None and self.prompt_mode not in supported:
            raise ConfigError(
                f"backend {getattr(self.backend, 'backend_id', '?')!r} does not "
                f"support mode {self.prompt_mode.value}"
            )

    def describe(self) -> dict:
        """Frozen, JSON-ready description for the run artifact directory."""
        return {
            "method_id": self.method_id,
            "prompt_mode": self.prompt_mode.value,
            "backend_id": getattr(self.backend, "backend_id", "unknown"),
            "dataset_id": self.manifest.dataset_id,
            "split": self.split.value,
            "connectivity": self.connectivity,
            "seed": self.seed,
            "negative_frames": self.negative_frames,
            "jobs": self.jobs,
        }


@dataclass(frozen=True)
class SkipRecord:
    case_id: str
    target_id: str
    frame_index: int
    reason: str


@dataclass(frozen=True)
class FailureRecord:
    case_id: str
    target_id: str
    frame_index: int
    error: str


@dataclass
class RunResult:
    rows: list[EvalRow] = field(default_factory=list)
    skipped: list[SkipRecord] = field(default_factory=list)
    failed: list[FailureRecord] = field(default_factory=list)
    conventions: tuple[str, ...] = CONVENTION_NOTES

    @property
    def unit_count(self) -> int:
        return len(self.rows) + len(self.skipped) + len(self.failed)


def _build_prompt(spec: RunSpec, unit: EvalUnit) -> PromptBundle | SkipRecord:
    phrase = spec.manifest.phrase_for(unit.target_id)
    if unit.gt_mask.is_empty:
        if spec.prompt_mode is PromptMode.TEXT and spec.negative_frames:
            return PromptBundle.text(phrase)
        return SkipRecord(
            unit.case_id, unit.target_id, unit.frame_index,
            "empty gt: no box derivable" if spec.prompt_mode is not PromptMode.TEXT
            else "empty gt: negative-frame scoring disabled",
        )
    if spec.prompt_mode is PromptMode.TEXT:
        return PromptBundle.text(phrase)
    box = largest_component_box(unit.gt_mask, spec.connectivity)
    if spec.prompt_mode is PromptMode.TEXT_BOX:
        return PromptBundle.text_box(phrase, box)
    return PromptBundle.box_only(box)


def _eval_unit(spec: RunSpec, unit: EvalUnit) -> EvalRow | SkipRecord | FailureRecord:
    prompt = _build_prompt(spec, unit)
    if isinstance(prompt, SkipRecord):
        return prompt
    try:
        result = check_result_dims(unit.image, spec.backend.segment(unit.image, prompt))
    except BackendError as exc:
        return FailureRecord(unit.case_id, unit.target_id, unit.frame_index, str(exc))
    except ValueError as exc:
        return FailureRecord(
            unit.case_id, unit.target_id, unit.frame_index,
            f"backend contract violation: {exc}",
        )
    inter, p, g = dice_counts(result.mask, unit.gt_mask)
    return EvalRow(
        dataset_id=spec.manifest.dataset_id,
        case_id=unit.case_id,
        target_id=unit.target_id,
        frame_index=unit.frame_index,
        method_id=spec.method_id,
        prompt_mode=spec.prompt_mode.value,
        dice=dice_from_counts(inter, p, g),
        intersection_px=inter,
        pred_px=p,
        gt_px=g,
        dimension=spec.manifest.dimension,
    )


def run_eval(spec: RunSpec) -> RunResult:
    """Evaluate every unit of the split; deterministic for pure backends.

    Units fan out to a bounded worker pool; outcomes are re-sorted so the
    result is independent of worker count. Coverage is total:
    rows + skipped + failed == eval units.
    """
    units = list(iter_eval_units(spec.manifest, spec.split))
    if spec.jobs == 1:
        outcomes = [_eval_unit(spec, u) for u in units]
    else:
        with ThreadPoolExecutor(max_workers=spec.jobs) as pool:
            outcomes = list(pool.map(lambda u: _eval_unit(spec, u), units))
    result = RunResult()
    for outcome in outcomes:
        if isinstance(outcome, EvalRow):
            result.rows.append(outcome)
        elif isinstance(outcome, SkipRecord):
            result.skipped.append(outcome)
        else:
            result.failed.append(outcome)
    result.rows.sort(key=lambda r: (r.case_id, r.target_id, r.frame_index))
    result.skipped.sort(key=lambda s: (s.case_id, s.target_id, s.frame_index))
    result.failed.sort(key=lambda f: (f.case_id, f.target_id, f.frame_index))
    assert result.unit_count == len(units)
    return result


# ---------------------------------------------------------------------------
# Training-protocol descriptor (declarative only; the harness never trains)
# ---------------------------------------------------------------------------

DEFAULT_FROZEN = ("image_encoder", "text_encoder")
DEFAULT_TRAINABLE = ("detector",)

FINETUNE_SCHEMA = {
    "type": "object",
    "required": ["protocol", "frozen", "trainable", "phrase_constraint", "flags"],
    "additionalProperties": False,
    "properties": {
        "protocol": {"const": "supervised-finetune"},
        "frozen": {"type": "array", "items": {"type": "string"}, "uniqueItems": True},
        "trainable": {
            "type": "array",
            "items": {"type": "string"},
            "minItems": 1,
            "uniqueItems": True,
        },
        "phrase_constraint": {
            "type": "object",
            "required": ["max_words"],
            "additionalProperties": False,
            "properties": {"max_words": {"type": "integer", "minimum": 1}},
        },
        "flags": {"type": "array", "items": {"type": "string"}},
    },
}


def emit_finetune_protocol(
    frozen: tuple[str, ...] = DEFAULT_FROZEN,
    trainable: tuple[str, ...] = DEFAULT_TRAINABLE,
    max_words: int = 3,
) -> dict:
    """Build the declarative descriptor consumed by external training infra.

    The default freezes both encoders and trains only the detector.
    Deviations stay schema-valid but are flagged "beyond paper protocol".
    """
    flags = []
    for component in trainable:
        if component not in DEFAULT_TRAINABLE:
            flags.append(f"beyond paper protocol: trainable {component}")
    for component in DEFAULT_FROZEN:
        if component not in frozen:
            flags.append(f"beyond paper protocol: {component} not frozen")
    doc = {
        "protocol": "supervised-finetune",
        "frozen": sorted(frozen),
        "trainable": sorted(trainable),
        "phrase_constraint": {"max_words": max_words},
        "flags": flags,
    }
    jsonschema.validate(doc, FINETUNE_SCHEMA)
    return doc


def validate_finetune_protocol(doc: dict) -> None:
    jsonschema.validate(doc, FINETUNE_SCHEMA)


def finetune_protocol_roundtrip(doc: dict) -> dict:
    """Serialize, re-parse, and re-validate; returns the reparsed document."""
    reparsed = json.loads(json.dumps(doc))
    validate_finetune_protocol(reparsed)
    return reparsed
