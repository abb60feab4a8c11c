"""Dice computation and table-style aggregation into per-method summaries.

Conventions (recorded in every report header):

- dice(P, G) = 2|P∩G| / (|P| + |G|); both empty -> 1.0 (a correct "no
  target" answer on a negative frame), empty prediction against nonempty
  GT -> 0.0.
- 3D cases aggregate as whole-volume voxel Dice (sums of intersections and
  cardinalities across frames); per-frame slice-mean is available behind a
  flag.
- Multi-target datasets: per-case score = mean over targets, dataset
  score = mean over cases.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import BinaryMask
from .errors import ConceptSegError, DimensionMismatchError


def dice_counts(pred: BinaryMask, gt: BinaryMask) -> tuple[int, int, int]:
    """(|P∩G|, |P|, |G|) for one mask pair; dimension-checked."""
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise DimensionMismatchError(
            f"pred {pred.width}x{pred.height} vs gt {gt.width}x{gt.height}"
        )
    inter = int(np.logical_and(pred.bits, gt.bits).sum())
    return inter, int(pred.bits.sum()), int(gt.bits.sum())


def dice_from_counts(intersection: int, pred_px: int, gt_px: int) -> float:
    if pred_px + gt_px == 0:
        return 1.0
    return 2.0 * intersection / (pred_px + gt_px)


def dice(pred: BinaryMask, gt: BinaryMask) -> float:
    inter, p, g = dice_counts(pred, gt)
    return dice_from_counts(inter, p, g)


def volume_dice(pred_frames: Sequence[BinaryMask], gt_frames: Sequence[BinaryMask]) -> float:
    """Voxel-level Dice over a frame sequence.

    Intersections and cardinalities accumulate across frames before the
    ratio is taken, which differs from averaging per-frame Dice values.
    """
    if len(pred_frames) != len(gt_frames):
        raise DimensionMismatchError(
            f"{len(pred_frames)} prediction frames vs {len(gt_frames)} gt frames"
        )
    if not pred_frames:
        raise ValueError("volume_dice needs at least one frame")
    inter = p = g = 0
    for pf, gf in zip(pred_frames, gt_frames):
        i, pp, gg = dice_counts(pf, gf)
        inter += i
        p += pp
        g += gg
    return dice_from_counts(inter, p, g)


@dataclass(frozen=True)
class EvalRow:
    """Per-(case, target, frame) result of one method on one dataset.

    The raw pixel counts ride along so frame rows can be reduced to
    whole-volume Dice without touching the masks again.
    """

    dataset_id: str
    case_id: str
    target_id: str
    frame_index: int
    method_id: str
    prompt_mode: str
    dice: float
    intersection_px: int
    pred_px: int
    gt_px: int
    dimension: str = "d2"

    def __post_init__(self):
        if not 0.0 <= self.dice <= 1.0:
            raise ValueError(f"dice {self.dice} outside [0, 1]")

    @property
    def key(self) -> tuple[str, str, str, int, str]:
        return (self.dataset_id, self.case_id, self.target_id, self.frame_index, self.method_id)


@dataclass(frozen=True)
class MethodSummary:
    method_id: str
    dataset_id: str
    mean_dice: float
    n_units: int

    def __post_init__(self):
        if not 0.0 <= self.mean_dice <= 1.0:
            raise ValueError(f"mean_dice {self.mean_dice} outside [0, 1]")
        if self.n_units < 1:
            raise ValueError("n_units must be >= 1")


def _case_score(rows: list[EvalRow], slice_mean: bool) -> float:
    """Per-case score: mean over targets of the per-target aggregate."""
    by_target: dict[str, list[EvalRow]] = {}
    for row in rows:
        by_target.setdefault(row.target_id, []).append(row)
    target_scores = []
    for frame_rows in by_target.values():
        frame_rows = sorted(frame_rows, key=lambda r: r.frame_index)
        if frame_rows[0].dimension == "d3" and not slice_mean:
            inter = sum(r.intersection_px for r in frame_rows)
            p = sum(r.pred_px for r in frame_rows)
            g = sum(r.gt_px for r in frame_rows)
            target_scores.append(dice_from_counts(inter, p, g))
        else:
            target_scores.append(sum(r.dice for r in frame_rows) / len(frame_rows))
    return sum(target_scores) / len(target_scores)


def summarize(rows: Iterable[EvalRow], slice_mean: bool = False) -> list[MethodSummary]:
    """Reduce rows to one mean per (dataset, method).

    The unit is the case: frame rows reduce to a per-case score first
    (whole-volume Dice for d3 unless slice_mean), multiple targets average
    within the case, and the dataset mean is taken over cases.
    """
    rows = list(rows)
    seen: set[tuple] = set()
    for row in rows:
        if row.key in seen:
            raise ConceptSegError(f"duplicate row key {row.key}")
        seen.add(row.key)
    grouped: dict[tuple[str, str], dict[str, list[EvalRow]]] = {}
    for row in rows:
        grouped.setdefault((row.dataset_id, row.method_id), {}).setdefault(
            row.case_id, []
        ).append(row)
    summaries = []
    for (dataset_id, method_id) in sorted(grouped):
        cases = grouped[(dataset_id, method_id)]
        scores = [_case_score(case_rows, slice_mean) for case_rows in cases.values()]
        summaries.append(
            MethodSummary(
                method_id=method_id,
                dataset_id=dataset_id,
                mean_dice=sum(scores) / len(scores),
                n_units=len(scores),
            )
        )
    return summaries


def delta_vs_best(subject: MethodSummary, others: Sequence[MethodSummary]) -> float:
    """Signed gap between the subject and the best of the other methods.

    Positive means the subject leads; this is the number behind the up/down
    arrow annotations in the rendered tables.
    """
    if not others:
        raise ValueError("delta_vs_best needs at least one other method")
    for other in others:
        if other.dataset_id != subject.dataset_id:
            raise ConceptSegError(
                f"dataset mismatch: {other.dataset_id!r} vs {subject.dataset_id!r}"
            )
    return subject.mean_dice - max(o.mean_dice for o in others)


def per_case_scores(rows: Iterable[EvalRow], slice_mean: bool = False) -> dict[str, float]:
    """case_id -> per-case score for a single method's rows."""
    by_case: dict[str, list[EvalRow]] = {}
    methods = set()
    for row in rows:
        methods.add(row.method_id)
        by_case.setdefault(row.case_id, []).append(row)
    if len(methods) > 1:
        raise ConceptSegError(f"rows span multiple methods: {sorted(methods)}")
    return {cid: _case_score(case_rows, slice_mean) for cid, case_rows in by_case.items()}


def per_case_series(
    rows_a: Iterable[EvalRow], rows_b: Iterable[EvalRow], slice_mean: bool = False
) -> list[tuple[str, float, float, float]]:
    """Case-by-case comparison of two methods: (case_id, a, b, a - b).

    Both row sets must cover exactly the same cases; output is ordered by
    case_id.
    """
    scores_a = per_case_scores(rows_a, slice_mean)
    scores_b = per_case_scores(rows_b, slice_mean)
    if set(scores_a) != set(scores_b):
        only_a = sorted(set(scores_a) - set(scores_b))
        only_b = sorted(set(scores_b) - set(scores_a))
        raise ConceptSegError(f"case-set mismatch: only_a={only_a[:5]} only_b={only_b[:5]}")
    return [
        (cid, scores_a[cid], scores_b[cid], scores_a[cid] - scores_b[cid])
        for cid in sorted(scores_a)
    ]


def format_mean(value: float) -> str:
    """Four decimal places, round-half-even, matching table precision."""
    return f"{value:.4f}"


CONVENTION_NOTES = (
    "dice: 2|P∩G|/(|P|+|G|); both-empty=1.0; empty-pred vs nonempty-gt=0.0",
    "d3 aggregation: whole-volume voxel dice per case (slice-mean available via flag)",
    "multi-target: per-case mean over targets, dataset mean over cases",
    "multi-frame units weighted equally within a case; cases weighted equally within a dataset",
    "means reported to 4 decimal places, round-half-even",
)
