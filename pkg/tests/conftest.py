from __future__ import annotations

import re

import numpy as np
import pytest

from conceptseg.core import BinaryMask, RasterImage, save_image, save_mask


def make_image(width: int, height: int, value: int = 100) -> RasterImage:
    return RasterImage(np.full((height, width, 3), value, dtype=np.uint8))


def mask_from_coords(width: int, height: int, coords) -> BinaryMask:
    bits = np.zeros((height, width), dtype=bool)
    for x, y in coords:
        bits[y, x] = True
    return BinaryMask(bits)


def write_dataset(
    tmp_path,
    dataset_id: str = "tiny",
    dimension: str = "d2",
    n_cases: int = 2,
    targets: dict[str, str] | None = None,
    frames_per_case: int = 1,
    size: int = 8,
    split: str = "test",
    empty_gt_cases: tuple[str, ...] = (),
):
    """Write a small valid dataset and return its manifest path."""
    import json

    targets = targets or {"blob": "blob"}
    (tmp_path / "images").mkdir(exist_ok=True)
    (tmp_path / "masks").mkdir(exist_ok=True)
    cases = []
    for i in range(n_cases):
        case_id = f"case_{i:03d}"
        image_refs = []
        gt = {tid: [] for tid in targets}
        for f in range(frames_per_case):
            ref = f"images/{case_id}_f{f:02d}.png"
            save_image(make_image(size, size, value=40 + i % 200), tmp_path / ref)
            image_refs.append(ref)
            for t_index, tid in enumerate(targets):
                mask_ref = f"masks/{case_id}_f{f:02d}_{tid}.png"
                if case_id in empty_gt_cases:
                    mask = BinaryMask.empty(size, size)
                else:
                    x0 = min(1 + t_index * 3, size - 2)
                    mask = mask_from_coords(
                        size, size, [(x0, 2), (x0 + 1, 2), (x0, 3), (x0 + 1, 3)]
                    )
                save_mask(mask, tmp_path / mask_ref)
                gt[tid].append(mask_ref)
        cases.append({"case_id": case_id, "split": split, "images": image_refs, "gt": gt})
    doc = {
        "dataset_id": dataset_id,
        "modality": "us",
        "dimension": dimension,
        "targets": [{"target_id": tid, "phrase": phrase} for tid, phrase in targets.items()],
        "cases": cases,
    }
    manifest_path = tmp_path / "manifest.json"
    manifest_path.write_text(json.dumps(doc, indent=2))
    return manifest_path


_CRITERION_RE = re.compile(r"test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = {}
    for status, verdict in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            if getattr(report, "when", "call") != "call":
                continue
            if "test_acceptance" not in report.nodeid:
                continue
            match = _CRITERION_RE.search(report.nodeid)
            if not match:
                continue
            number = int(match.group(1))
            name = match.group(2).replace("_", " ")
            lines[number] = f"acceptance criterion {number} ({name}): {verdict}"
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
