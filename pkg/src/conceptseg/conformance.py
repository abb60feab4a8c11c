"""Anti-drift checks over the bundled published reference results.

The reference numbers live in exactly one fixture file
(data/paper_tables.json); nothing elsewhere hardcodes them. Every
relationship among them that can be recomputed is recomputed here: each
printed delta arrow must follow from the printed means via
metrics.delta_vs_best, and every registered phrase must satisfy the
three-word validator. Discrepancies are findings, not errors: the single
known one is listed in the fixture's known_discrepancies set, and the
assertion is that no unexpected ones exist.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import PhraseError
from .metrics import MethodSummary, delta_vs_best
from .prompts import registry_dataset_ids, registry_display_phrases, validate_phrase

ARROW_TOLERANCE = 1e-4

_FIXTURE_CACHE: dict | None = None


def load_paper_tables() -> dict:
    global _FIXTURE_CACHE
    if _FIXTURE_CACHE is None:
        text = (resources.files("conceptseg") / "data" / "paper_tables.json").read_text()
        _FIXTURE_CACHE = json.loads(text)
    return _FIXTURE_CACHE


@dataclass(frozen=True)
class ArrowCheck:
    table: str
    method: str
    dataset: str
    printed: float
    recomputed: float

    @property
    def abs_diff(self) -> float:
        return abs(self.printed - self.recomputed)

    @property
    def consistent(self) -> bool:
        return self.abs_diff <= ARROW_TOLERANCE


def check_arrow_consistency(table_id: str, fixture: dict | None = None) -> list[ArrowCheck]:
    """Recompute every printed arrow of one table from its printed means.

    The arrow for (method, dataset) is the method's mean minus the best
    mean among all other methods of the same table on that dataset.
    """
    fixture = fixture or load_paper_tables()
    table = fixture["tables"][table_id]
    cells = table["methods"]
    checks = []
    for method, arrows in table["arrows"].items():
        for dataset, printed in arrows.items():
            subject = MethodSummary(method, dataset, cells[method][dataset], 1)
            others = [
                MethodSummary(other, dataset, other_cells[dataset], 1)
                for other, other_cells in cells.items()
                if other != method and dataset in other_cells
            ]
            checks.append(
                ArrowCheck(
                    table=table_id,
                    method=method,
                    dataset=dataset,
                    printed=printed,
                    recomputed=delta_vs_best(subject, others),
                )
            )
    return checks


def check_all_arrows(fixture: dict | None = None) -> list[ArrowCheck]:
    fixture = fixture or load_paper_tables()
    checks: list[ArrowCheck] = []
    for table_id in fixture["tables"]:
        checks.extend(check_arrow_consistency(table_id, fixture))
    return checks


def unexpected_discrepancies(fixture: dict | None = None) -> list[ArrowCheck]:
    """Inconsistent arrows that are NOT in the known_discrepancies set.

    An empty return is the conformance assertion; the known set must also
    be fully reproduced (a vanished discrepancy means the fixture drifted).
    """
    fixture = fixture or load_paper_tables()
    known = {
        (d["table"], d["method"], d["dataset"]) for d in fixture["known_discrepancies"]
    }
    return [
        check
        for check in check_all_arrows(fixture)
        if not check.consistent and (check.table, check.method, check.dataset) not in known
    ]


def known_discrepancy_checks(fixture: dict | None = None) -> list[ArrowCheck]:
    fixture = fixture or load_paper_tables()
    known = {
        (d["table"], d["method"], d["dataset"]) for d in fixture["known_discrepancies"]
    }
    return [
        check
        for check in check_all_arrows(fixture)
        if (check.table, check.method, check.dataset) in known
    ]


@dataclass(frozen=True)
class PhraseCheck:
    dataset_id: str
    target_id: str
    phrase: str
    ok: bool
    detail: str = ""


def check_phrase_fixture() -> list[PhraseCheck]:
    """Validate every registered phrase against the three-word rule."""
    results = []
    for dataset_id in registry_dataset_ids():
        for target_id, phrase in registry_display_phrases(dataset_id):
            try:
                validate_phrase(phrase)
                results.append(PhraseCheck(dataset_id, target_id, phrase, True))
            except PhraseError as exc:
                results.append(PhraseCheck(dataset_id, target_id, phrase, False, str(exc)))
    return results


def check_phrases(phrases: list[str]) -> list[tuple[str, bool, str]]:
    """Ad-hoc phrase validation (used by the suite's self-test)."""
    out = []
    for phrase in phrases:
        try:
            validate_phrase(phrase)
            out.append((phrase, True, ""))
        except PhraseError as exc:
            out.append((phrase, False, str(exc)))
    return out


def conformance_report() -> dict:
    """Machine-readable summary of every conformance check."""
    fixture = load_paper_tables()
    checks = check_all_arrows(fixture)
    phrase_checks = check_phrase_fixture()
    return {
        "arrow_checks": len(checks),
        "arrow_tolerance": ARROW_TOLERANCE,
        "unexpected_discrepancies": [
            {
                "table": c.table,
                "method": c.method,
                "dataset": c.dataset,
                "printed": c.printed,
                "recomputed": c.recomputed,
            }
            for c in unexpected_discrepancies(fixture)
        ],
        "known_discrepancies": fixture["known_discrepancies"],
        "phrase_failures": [
            {"dataset": p.dataset_id, "phrase": p.phrase, "detail": p.detail}
            for p in phrase_checks
            if not p.ok
        ],
        "unique_phrases": sorted(
            {validate_phrase(p.phrase).text for p in phrase_checks}
        ),
    }
