"""Report emission: row CSVs, summary JSON, arrow tables, figure data series."""

from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError
from .metrics import (
    CONVENTION_NOTES,
    EvalRow,
    MethodSummary,
    delta_vs_best,
    format_mean,
    per_case_series,
)

ROW_FIELDS = (
    "dataset_id", "case_id", "target_id", "frame_index", "method_id",
    "prompt_mode", "dimension", "dice", "intersection_px", "pred_px", "gt_px",
)


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def rows_to_csv_text(rows: Iterable[EvalRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(ROW_FIELDS)
    for row in rows:
        writer.writerow(
            [
                row.dataset_id, row.case_id, row.target_id, row.frame_index,
                row.method_id, row.prompt_mode, row.dimension, repr(row.dice),
                row.intersection_px, row.pred_px, row.gt_px,
            ]
        )
    return buf.getvalue()


def write_rows_csv(rows: Iterable[EvalRow], path: str | Path) -> None:
    atomic_write_text(path, rows_to_csv_text(rows))


def read_rows_csv(path: str | Path) -> list[EvalRow]:
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            rows.append(
                EvalRow(
                    dataset_id=record["dataset_id"],
                    case_id=record["case_id"],
                    target_id=record["target_id"],
                    frame_index=int(record["frame_index"]),
                    method_id=record["method_id"],
                    prompt_mode=record["prompt_mode"],
                    dimension=record["dimension"],
                    dice=float(record["dice"]),
                    intersection_px=int(record["intersection_px"]),
                    pred_px=int(record["pred_px"]),
                    gt_px=int(record["gt_px"]),
                )
            )
    return rows


def arrow_text(delta: float) -> str:
    if delta > 0:
        return f"↑{delta:.4f}"
    if delta < 0:
        return f"↓{-delta:.4f}"
    return "=0.0000"


def _baseline_summaries(baselines: dict, dataset_id: str) -> list[MethodSummary]:
    methods = baselines.get(dataset_id, {})
    return [
        MethodSummary(method_id=m, dataset_id=dataset_id, mean_dice=v, n_units=1)
        for m, v in methods.items()
    ]


def summaries_with_deltas(
    summaries: Sequence[MethodSummary], baselines: dict | None
) -> list[dict]:
    """Summary records, each with delta_vs_best when baselines cover its dataset."""
    records = []
    for summary in summaries:
        record = {
            "method_id": summary.method_id,
            "dataset_id": summary.dataset_id,
            "mean_dice": summary.mean_dice,
            "mean_dice_4dp": format_mean(summary.mean_dice),
            "n_units": summary.n_units,
        }
        if baselines:
            others = [
                o
                for o in _baseline_summaries(baselines, summary.dataset_id)
                if o.method_id != summary.method_id
            ]
            if others:
                record["delta_vs_best"] = delta_vs_best(summary, others)
        records.append(record)
    return records


def render_summary_table(
    summaries: Sequence[MethodSummary], baselines: dict | None = None
) -> str:
    """Plain-text table with ↑/↓ markers mirroring the reference layout."""
    records = summaries_with_deltas(summaries, baselines)
    header = f"{'dataset':<24} {'method':<24} {'mean dice':>10} {'n':>6}  delta_vs_best"
    lines = [header, "-" * len(header)]
    for record in records:
        delta = record.get("delta_vs_best")
        lines.append(
            f"{record['dataset_id']:<24} {record['method_id']:<24} "
            f"{record['mean_dice_4dp']:>10} {record['n_units']:>6}  "
            f"{arrow_text(delta) if delta is not None else '-'}"
        )
    return "\n".join(lines) + "\n"


def summary_json(
    summaries: Sequence[MethodSummary],
    baselines: dict | None = None,
    counts: dict | None = None,
    extra_notes: Sequence[str] = (),
) -> str:
    doc = {
        "conventions": list(CONVENTION_NOTES) + list(extra_notes),
        "methods": summaries_with_deltas(summaries, baselines),
    }
    if counts:
        doc["counts"] = counts
    return json.dumps(doc, indent=2) + "\n"


def per_case_series_csv(
    rows_a: Sequence[EvalRow],
    rows_b: Sequence[EvalRow],
    method_a: str,
    method_b: str,
) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["case_id", method_a, method_b, "delta"])
    for case_id, a, b, d in per_case_series(rows_a, rows_b):
        writer.writerow([case_id, repr(a), repr(b), repr(d)])
    return buf.getvalue()


def radar_data(summaries: Sequence[MethodSummary]) -> dict:
    """Per-method mean series over the dataset axis, for radar-style figures.

    Data only; rendering is out of scope. Missing (method, dataset) cells
    are null.
    """
    datasets = sorted({s.dataset_id for s in summaries})
    methods = sorted({s.method_id for s in summaries})
    cell = {(s.method_id, s.dataset_id): s.mean_dice for s in summaries}
    return {
        "datasets": datasets,
        "series": [
            {
                "method_id": method,
                "values": [cell.get((method, ds)) for ds in datasets],
            }
            for method in methods
        ],
    }


def load_baselines(path: str | Path) -> dict:
    """Baselines file: {"<dataset_id>": {"<method_id>": mean_dice, ...}, ...}."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read baselines file {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("baselines file must be a JSON object")
    for dataset_id, methods in doc.items():
        if not isinstance(methods, dict):
            raise ConfigError(f"baselines[{dataset_id!r}] must be an object")
        for method, value in methods.items():
            if not isinstance(value, (int, float)) or not 0.0 <= float(value) <= 1.0:
                raise ConfigError(f"baselines[{dataset_id!r}][{method!r}] must be in [0, 1]")
    return doc
