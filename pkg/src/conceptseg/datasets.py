"""Manifest-driven dataset ingestion, deterministic splitting, and case iteration.

A manifest describes one dataset: its targets (each with a concept phrase),
and its cases. 2D cases carry exactly one frame; 3D volumes and video are
frame sequences with one mask per target per frame. The split unit is always
the case, never the frame, so volumes cannot leak frames across splits.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator

import jsonschema

from .core import BinaryMask, RasterImage, load_image, load_mask
from .errors import ManifestError, SplitError
from .prompts import ConceptPhrase, validate_phrase

MODALITIES = (
    "x-ray", "us", "oct", "fundus", "dermoscopy",
    "histopathology", "ir", "endoscopy", "ct", "mri",
)

TRAIN_FRACTION = 0.8  # 4:1 train/test, ceiling on the train side

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["dataset_id", "modality", "dimension", "targets", "cases"],
    "additionalProperties": False,
    "properties": {
        "dataset_id": {"type": "string", "minLength": 1},
        "modality": {"enum": list(MODALITIES)},
        "dimension": {"enum": ["d2", "d3"]},
        "targets": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["target_id", "phrase"],
                "additionalProperties": False,
                "properties": {
                    "target_id": {"type": "string", "minLength": 1},
                    "phrase": {"type": "string", "minLength": 1},
                },
            },
        },
        "cases": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["case_id", "split", "images", "gt"],
                "additionalProperties": False,
                "properties": {
                    "case_id": {"type": "string", "minLength": 1},
                    "split": {"enum": ["train", "test", "unassigned"]},
                    "images": {
                        "type": "array",
                        "minItems": 1,
                        "items": {"type": "string", "minLength": 1},
                    },
                    "gt": {
                        "type": "object",
                        "additionalProperties": {
                            "type": "array",
                            "items": {"type": "string", "minLength": 1},
                        },
                    },
                },
            },
        },
    },
}


class Split(enum.Enum):
    TRAIN = "train"
    TEST = "test"
    UNASSIGNED = "unassigned"


@dataclass(frozen=True)
class TargetSpec:
    target_id: str
    phrase: ConceptPhrase


@dataclass(frozen=True)
class CaseRecord:
    case_id: str
    image_refs: tuple[str, ...]
    gt_refs: dict[str, tuple[str, ...]]
    split: Split


@dataclass(frozen=True)
class DatasetManifest:
    dataset_id: str
    modality: str
    dimension: str  # "d2" | "d3"
    targets: tuple[TargetSpec, ...]
    cases: tuple[CaseRecord, ...]
    base_dir: Path

    @property
    def target_ids(self) -> tuple[str, ...]:
        return tuple(t.target_id for t in self.targets)

    def phrase_for(self, target_id: str) -> ConceptPhrase:
        for t in self.targets:
            if t.target_id == target_id:
                return t.phrase
        raise ManifestError(f"target {target_id!r} not declared in {self.dataset_id}")

    def cases_in(self, split: Split) -> tuple[CaseRecord, ...]:
        return tuple(c for c in self.cases if c.split is split)


@dataclass(frozen=True)
class EvalUnit:
    """One (case, target, frame) triple with its decoded image and GT mask."""

    case_id: str
    target_id: str
    frame_index: int
    image: RasterImage
    gt_mask: BinaryMask


def _check_invariants(doc: dict) -> list[str]:
    """Invariant violations beyond the JSON schema; empty list means valid."""
    problems: list[str] = []
    target_ids = [t["target_id"] for t in doc["targets"]]
    if len(set(target_ids)) != len(target_ids):
        problems.append("duplicate target_id in targets")
    for t in doc["targets"]:
        try:
            validate_phrase(t["phrase"])
        except Exception as exc:
            problems.append(f"target {t['target_id']!r}: {exc}")
    declared = set(target_ids)
    seen_cases: set[str] = set()
    for case in doc["cases"]:
        cid = case["case_id"]
        if cid in seen_cases:
            problems.append(f"duplicate case_id {cid!r}")
        seen_cases.add(cid)
        n_frames = len(case["images"])
        if doc["dimension"] == "d2" and n_frames != 1:
            problems.append(f"case {cid!r}: d2 cases must have exactly 1 frame, got {n_frames}")
        basenames = [Path(p).name for p in case["images"]]
        if basenames != sorted(basenames):
            problems.append(
                f"case {cid!r}: frame files must be in zero-padded lexicographic order"
            )
        extra = set(case["gt"]) - declared
        if extra:
            problems.append(f"case {cid!r}: undeclared targets {sorted(extra)}")
        missing = declared - set(case["gt"])
        if missing:
            problems.append(f"case {cid!r}: missing gt for targets {sorted(missing)}")
        for tid, refs in case["gt"].items():
            if len(refs) != n_frames:
                problems.append(
                    f"case {cid!r} target {tid!r}: {len(refs)} gt frames vs "
                    f"{n_frames} image frames"
                )
    return problems


def validate_manifest_doc(doc: dict) -> list[str]:
    """All schema and invariant violations for a parsed manifest document."""
    try:
        jsonschema.validate(doc, MANIFEST_SCHEMA)
    except jsonschema.ValidationError as exc:
        return [f"schema: {exc.message}"]
    return _check_invariants(doc)


def load_manifest(path: str | Path, check_files: str = "strict") -> DatasetManifest:
    """Load and validate a manifest.

    check_files="strict" verifies every referenced image/mask file exists;
    "lazy" defers missing-file errors to iteration time.
    """
    if check_files not in ("strict", "lazy"):
        raise ValueError(f"check_files must be 'strict' or 'lazy', got {check_files!r}")
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    problems = validate_manifest_doc(doc)
    if problems:
        raise ManifestError(f"{path}: " + "; ".join(problems))
    base_dir = path.parent
    if check_files == "strict":
        for case in doc["cases"]:
            refs = list(case["images"])
            for frame_refs in case["gt"].values():
                refs.extend(frame_refs)
            for ref in refs:
                if not (base_dir / ref).is_file():
                    raise ManifestError(f"missing file {ref!r} (case {case['case_id']!r})")
    targets = tuple(
        TargetSpec(t["target_id"], validate_phrase(t["phrase"])) for t in doc["targets"]
    )
    cases = tuple(
        CaseRecord(
            case_id=c["case_id"],
            image_refs=tuple(c["images"]),
            gt_refs={tid: tuple(refs) for tid, refs in c["gt"].items()},
            split=Split(c["split"]),
        )
        for c in doc["cases"]
    )
    return DatasetManifest(
        dataset_id=doc["dataset_id"],
        modality=doc["modality"],
        dimension=doc["dimension"],
        targets=targets,
        cases=cases,
        base_dir=base_dir,
    )


def manifest_to_doc(manifest: DatasetManifest) -> dict:
    return {
        "dataset_id": manifest.dataset_id,
        "modality": manifest.modality,
        "dimension": manifest.dimension,
        "targets": [
            {"target_id": t.target_id, "phrase": t.phrase.text} for t in manifest.targets
        ],
        "cases": [
            {
                "case_id": c.case_id,
                "split": c.split.value,
                "images": list(c.image_refs),
                "gt": {tid: list(refs) for tid, refs in c.gt_refs.items()},
            }
            for c in manifest.cases
        ],
    }


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    Path(path).write_text(json.dumps(manifest_to_doc(manifest), indent=2) + "\n")


# ---------------------------------------------------------------------------
# Splitting
# ---------------------------------------------------------------------------


def _split_rank(seed: int, case_id: str) -> str:
    return hashlib.sha256(f"{seed}:{case_id}".encode()).hexdigest()


def split_assignment(case_ids: list[str], seed: int) -> dict[str, Split]:
    """Deterministic 4:1 assignment, a pure function of (seed, case-id set).

    Cases are ranked by a seeded hash of their ids, so the assignment is
    independent of input ordering; exactly ceil(0.8 * N) cases land in train.
    """
    unique = sorted(set(case_ids))
    if len(unique) != len(case_ids):
        raise SplitError("duplicate case ids")
    n_train = math.ceil(TRAIN_FRACTION * len(unique))
    ranked = sorted(unique, key=lambda cid: (_split_rank(seed, cid), cid))
    train = set(ranked[:n_train])
    return {cid: (Split.TRAIN if cid in train else Split.TEST) for cid in unique}


def split_cases(manifest: DatasetManifest, seed: int) -> DatasetManifest:
    """Assign train/test splits to a fully-unassigned manifest.

    Manifests that ship an official split must skip this op; calling it on
    pre-assigned cases is an error.
    """
    preassigned = [c.case_id for c in manifest.cases if c.split is not Split.UNASSIGNED]
    if preassigned:
        raise SplitError(f"cases already assigned: {preassigned[:5]}")
    if not manifest.cases:
        raise SplitError("manifest has no cases to split")
    assignment = split_assignment([c.case_id for c in manifest.cases], seed)
    new_cases = tuple(replace(c, split=assignment[c.case_id]) for c in manifest.cases)
    return replace(manifest, cases=new_cases)


# ---------------------------------------------------------------------------
# Iteration
# ---------------------------------------------------------------------------


def iter_eval_units(manifest: DatasetManifest, split: Split) -> Iterator[EvalUnit]:
    """Yield every (case, target, frame) in the split exactly once.

    Order is deterministic: cases sorted by id, targets in declaration
    order, frames in sequence order. Masks must match their frame's size.
    """
    for case in sorted(manifest.cases_in(split), key=lambda c: c.case_id):
        for target_id in manifest.target_ids:
            for frame_index, image_ref in enumerate(case.image_refs):
                image = load_image(manifest.base_dir / image_ref)
                gt = load_mask(manifest.base_dir / case.gt_refs[target_id][frame_index])
                if (gt.width, gt.height) != (image.width, image.height):
                    raise ManifestError(
                        f"case {case.case_id!r} target {target_id!r} frame {frame_index}: "
                        f"mask {gt.width}x{gt.height} vs image {image.width}x{image.height}"
                    )
                yield EvalUnit(case.case_id, target_id, frame_index, image, gt)


def count_eval_units(manifest: DatasetManifest, split: Split) -> int:
    return sum(
        len(case.image_refs) * len(manifest.targets) for case in manifest.cases_in(split)
    )
