"""Command-line surface: validate, split, eval, agent, report, toy-gen.

Configuration resolves with precedence flags > environment > config file,
and every resolved value is echoed into the run artifact directory before
any work starts. Artifact directories are content-addressed by the
resolved config, so re-invoking the same config reproduces the same run
against pure backends.

Environment variables: CONCEPTSEG_BACKEND_URL, CONCEPTSEG_MLLM_URL,
CONCEPTSEG_JOBS.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .agent import AcceptIfImprovedMllm, HttpMllm, ScriptedMllm, run_agent, save_transcript
from .backends import FixtureWriter, RecordingBackend, RemoteBackend, ReplayBackend
from .conformance import conformance_report
from .datasets import Split, iter_eval_units, load_manifest, save_manifest, split_cases, validate_manifest_doc
from .errors import ConceptSegError, ConfigError
from .metrics import CONVENTION_NOTES, EvalRow, dice_counts, dice_from_counts, summarize
from .prompts import PromptMode
from .reporting import (
    atomic_write_text,
    load_baselines,
    per_case_series_csv,
    radar_data,
    read_rows_csv,
    render_summary_table,
    summary_json,
    write_rows_csv,
)
from .runner import RunSpec, run_eval
from .toysuite import ToySuiteSpec, toy_backend_for_suite, write_toy_suite
from .backends.toy import Corruption, ToyWorldConfig

ENV_BACKEND_URL = "CONCEPTSEG_BACKEND_URL"
ENV_MLLM_URL = "CONCEPTSEG_MLLM_URL"
ENV_JOBS = "CONCEPTSEG_JOBS"


# ---------------------------------------------------------------------------
# Config resolution: flags > env > file > defaults
# ---------------------------------------------------------------------------


def resolve_config(
    defaults: dict,
    file_path: str | None,
    env_map: dict[str, str],
    flag_values: dict,
) -> dict:
    resolved = dict(defaults)
    if file_path:
        try:
            file_cfg = json.loads(Path(file_path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config file {file_path}: {exc}") from exc
        unknown = set(file_cfg) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        resolved.update(file_cfg)
    for key, env_name in env_map.items():
        value = os.environ.get(env_name)
        if value is not None:
            resolved[key] = type(defaults[key])(value) if defaults[key] is not None else value
    for key, value in flag_values.items():
        if value is not None:
            resolved[key] = value
    return resolved


def run_dir_for(out_dir: str, command: str, resolved: dict) -> Path:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"), default=str)
    digest = hashlib.sha256(canonical.encode()).hexdigest()[:12]
    return Path(out_dir) / f"{command}-{digest}"


def prepare_run_dir(out_dir: str, command: str, resolved: dict, force: bool) -> Path:
    run_dir = run_dir_for(out_dir, command, resolved)
    if run_dir.exists() and not force:
        raise ConfigError(
            f"run directory {run_dir} already exists (same resolved config); "
            "use --force to overwrite"
        )
    run_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(
        run_dir / "resolved_config.json", json.dumps(resolved, indent=2, default=str) + "\n"
    )
    return run_dir


def build_backend(descriptor: str, manifest_path: str, record: str | None):
    try:
        return _build_backend_inner(descriptor, manifest_path, record)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot set up backend {descriptor!r}: {exc}") from exc


def _build_backend_inner(descriptor: str, manifest_path: str, record: str | None):
    if descriptor == "toy":
        backend = toy_backend_for_suite(Path(manifest_path).parent)
    elif descriptor.startswith("toy:"):
        backend = toy_backend_for_suite(descriptor[len("toy:"):])
    elif descriptor.startswith("replay:"):
        backend = ReplayBackend(descriptor[len("replay:"):])
    elif descriptor.startswith("remote:"):
        backend = RemoteBackend(descriptor[len("remote:"):])
    elif descriptor.startswith(("http://", "https://")):
        backend = RemoteBackend(descriptor)
    else:
        raise ConfigError(f"unknown backend descriptor {descriptor!r}")
    if record:
        backend = RecordingBackend(backend, FixtureWriter(record))
    return backend


def build_mllm(descriptor: str, candidates: list[str]):
    if descriptor == "mock:accept-iff-improved":
        if not candidates:
            raise ConfigError("mock:accept-iff-improved needs --candidates")
        return lambda: AcceptIfImprovedMllm(candidates)
    if descriptor.startswith("mock:script:"):
        replies = json.loads(Path(descriptor[len("mock:script:"):]).read_text())
        return lambda: ScriptedMllm(replies)
    if descriptor.startswith("live:"):
        client = HttpMllm(descriptor[len("live:"):])
        return lambda: client
    raise ConfigError(f"unknown planner descriptor {descriptor!r}")


def _write_failure_log(run_dir: Path, skipped, failed) -> None:
    lines = []
    for s in skipped:
        lines.append(f"SKIPPED {s.case_id} {s.target_id} frame={s.frame_index}: {s.reason}")
    for f in failed:
        lines.append(f"FAILED {f.case_id} {f.target_id} frame={f.frame_index}: {f.error}")
    atomic_write_text(run_dir / "failures.log", "\n".join(lines) + ("\n" if lines else ""))


def _write_conformance_notes(run_dir: Path, extra: list[str]) -> None:
    atomic_write_text(
        run_dir / "conformance.txt", "\n".join(list(CONVENTION_NOTES) + extra) + "\n"
    )


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    path = Path(args.manifest)
    failures = 0

    def report(name: str, ok: bool, detail: str = "") -> None:
        nonlocal failures
        status = "pass" if ok else "FAIL"
        print(f"{name:<40} {status}" + (f"  {detail}" if detail else ""))
        if not ok:
            failures += 1

    try:
        doc = json.loads(path.read_text())
        report("manifest readable", True)
    except (OSError, json.JSONDecodeError) as exc:
        report("manifest readable", False, str(exc))
        return 1
    problems = validate_manifest_doc(doc)
    report("schema and invariants", not problems)
    for problem in problems:
        print(f"  - {problem}")
    if problems:
        return 1
    if not args.lazy:
        missing = []
        base = path.parent
        for case in doc["cases"]:
            refs = list(case["images"])
            for frame_refs in case["gt"].values():
                refs.extend(frame_refs)
            missing.extend(r for r in refs if not (base / r).is_file())
        report("referenced files exist", not missing, f"{len(missing)} missing" if missing else "")
        for ref in missing[:10]:
            print(f"  - missing {ref}")
    return 1 if failures else 0


def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest, check_files="lazy")
    assigned = split_cases(manifest, args.seed)
    save_manifest(assigned, args.out)
    n_train = len(assigned.cases_in(Split.TRAIN))
    n_test = len(assigned.cases_in(Split.TEST))
    print(f"split {manifest.dataset_id}: {n_train} train / {n_test} test (seed={args.seed})")
    print(f"wrote {args.out}")
    return 0


def cmd_toy_gen(args) -> int:
    misground = {}
    for pair in (args.misground or "").split(","):
        if pair:
            key, _, value = pair.partition("=")
            if not value:
                raise ConfigError(f"misground entries look like phrase=wrong-phrase, got {pair!r}")
            misground[key.strip()] = value.strip()
    overrides = {}
    for pair in (args.phrase_override or "").split(","):
        if pair:
            label, _, phrase = pair.partition("=")
            if not phrase:
                raise ConfigError(f"phrase overrides look like label=phrase, got {pair!r}")
            overrides[label.strip()] = phrase.strip()
    lexicon = tuple(s.strip() for s in args.lexicon.split(",") if s.strip())
    targets = tuple(s.strip() for s in args.targets.split(",") if s.strip())
    vocabulary = frozenset(s.strip() for s in args.vocab.split(",") if s.strip())
    spec = ToySuiteSpec(
        dataset_id=args.dataset_id,
        n_cases=args.cases,
        seed=args.seed,
        width=args.size,
        height=args.size,
        lexicon=lexicon,
        targets=targets,
        phrase_overrides=tuple(overrides.items()),
    )
    world = ToyWorldConfig(
        vocabulary=vocabulary,
        misground_map=tuple(misground.items()),
        corruption=Corruption(args.dilate, args.erode, args.shift),
        box_rescue=args.box_rescue,
        seed=args.seed,
    )
    manifest_path = write_toy_suite(spec, world, args.out_dir)
    print(f"wrote toy suite: {manifest_path}")
    return 0


def cmd_eval(args) -> int:
    defaults = {
        "manifest": None, "mode": "TEXT", "backend": "toy", "split": "test",
        "connectivity": 8, "seed": 0, "jobs": 1, "negative_frames": False,
        "baselines": None, "method_id": None, "out_dir": "runs", "record": None,
        "allow_failures": False, "slice_mean": False,
    }
    flag_values = {
        "manifest": args.manifest, "mode": args.mode, "backend": args.backend,
        "split": args.split, "connectivity": args.connectivity, "seed": args.seed,
        "jobs": args.jobs, "negative_frames": args.negative_frames or None,
        "baselines": args.baselines, "method_id": args.method_id,
        "out_dir": args.out_dir, "record": args.record,
        "allow_failures": args.allow_failures or None,
        "slice_mean": args.slice_mean or None,
    }
    resolved = resolve_config(
        defaults, args.config,
        {"backend": ENV_BACKEND_URL, "jobs": ENV_JOBS},
        flag_values,
    )
    if not resolved["manifest"]:
        raise ConfigError("--manifest is required")
    if resolved["method_id"] is None:
        resolved["method_id"] = f"{resolved['backend']}:{resolved['mode']}"
    run_dir = prepare_run_dir(resolved["out_dir"], "eval", resolved, args.force)

    manifest = load_manifest(resolved["manifest"])
    backend = build_backend(resolved["backend"], resolved["manifest"], resolved["record"])
    spec = RunSpec(
        method_id=resolved["method_id"],
        prompt_mode=PromptMode(resolved["mode"]),
        backend=backend,
        manifest=manifest,
        split=Split(resolved["split"]),
        connectivity=int(resolved["connectivity"]),
        seed=int(resolved["seed"]),
        negative_frames=bool(resolved["negative_frames"]),
        jobs=int(resolved["jobs"]),
    )
    atomic_write_text(run_dir / "spec.json", json.dumps(spec.describe(), indent=2) + "\n")
    result = run_eval(spec)
    write_rows_csv(result.rows, run_dir / "rows.csv")
    _write_failure_log(run_dir, result.skipped, result.failed)
    extra_notes = [f"connectivity: {spec.connectivity}", f"seed: {spec.seed}"]
    _write_conformance_notes(run_dir, extra_notes)
    baselines = load_baselines(resolved["baselines"]) if resolved["baselines"] else None
    summaries = summarize(result.rows, slice_mean=bool(resolved["slice_mean"])) if result.rows else []
    counts = {
        "rows": len(result.rows),
        "skipped": len(result.skipped),
        "failed": len(result.failed),
        "units": result.unit_count,
    }
    atomic_write_text(
        run_dir / "summary.json", summary_json(summaries, baselines, counts, extra_notes)
    )
    print(f"run directory: {run_dir}")
    print(render_summary_table(summaries, baselines), end="")
    if result.failed:
        print(f"{len(result.failed)} unit(s) failed; see failures.log")
    if result.skipped:
        print(f"{len(result.skipped)} unit(s) skipped; see failures.log")
    if result.failed and not resolved["allow_failures"]:
        return 1
    return 0


def cmd_agent(args) -> int:
    defaults = {
        "manifest": None, "backend": "toy", "mllm": None, "candidates": "",
        "budget": 3, "split": "test", "out_dir": "runs", "method_id": "agent",
        "allow_failures": False,
    }
    flag_values = {
        "manifest": args.manifest, "backend": args.backend, "mllm": args.mllm,
        "candidates": args.candidates, "budget": args.budget, "split": args.split,
        "out_dir": args.out_dir, "method_id": args.method_id,
        "allow_failures": args.allow_failures or None,
    }
    resolved = resolve_config(
        defaults, args.config, {"backend": ENV_BACKEND_URL}, flag_values
    )
    if os.environ.get(ENV_MLLM_URL) and resolved["mllm"] is None:
        resolved["mllm"] = f"live:{os.environ[ENV_MLLM_URL]}"
    if not resolved["manifest"]:
        raise ConfigError("--manifest is required")
    if not resolved["mllm"]:
        raise ConfigError("--mllm is required (mock:accept-iff-improved, mock:script:FILE, live:URL)")
    run_dir = prepare_run_dir(resolved["out_dir"], "agent", resolved, args.force)

    manifest = load_manifest(resolved["manifest"])
    backend = build_backend(resolved["backend"], resolved["manifest"], None)
    candidates = [c.strip() for c in str(resolved["candidates"]).split(",") if c.strip()]
    mllm_factory = build_mllm(resolved["mllm"], candidates)
    budget = int(resolved["budget"])

    rows: list[EvalRow] = []
    errors: list[str] = []
    transcript_dir = run_dir / "transcripts"
    for unit in iter_eval_units(manifest, Split(resolved["split"])):
        query = f"segment the {manifest.phrase_for(unit.target_id).text}"
        try:
            transcript = run_agent(unit.image, query, backend, mllm_factory(), budget=budget)
        except ConceptSegError as exc:
            errors.append(f"{unit.case_id}/{unit.target_id}: {exc}")
            continue
        save_transcript(transcript, transcript_dir, f"{unit.case_id}__{unit.target_id}")
        # GT never enters the loop; scoring happens here, after the session.
        if transcript.final_masks:
            inter, p, g = dice_counts(transcript.final_masks[0], unit.gt_mask)
        else:
            inter, p, g = 0, 0, unit.gt_mask.foreground_count
        rows.append(
            EvalRow(
                dataset_id=manifest.dataset_id,
                case_id=unit.case_id,
                target_id=unit.target_id,
                frame_index=unit.frame_index,
                method_id=str(resolved["method_id"]),
                prompt_mode="AGENT",
                dice=dice_from_counts(inter, p, g),
                intersection_px=inter,
                pred_px=p,
                gt_px=g,
                dimension=manifest.dimension,
            )
        )
    write_rows_csv(rows, run_dir / "rows.csv")
    atomic_write_text(
        run_dir / "failures.log", "\n".join(errors) + ("\n" if errors else "")
    )
    _write_conformance_notes(run_dir, [f"agent budget: {budget}", "feedback is GT-free"])
    summaries = summarize(rows) if rows else []
    counts = {"rows": len(rows), "failed": len(errors)}
    atomic_write_text(run_dir / "summary.json", summary_json(summaries, None, counts))
    print(f"run directory: {run_dir}")
    print(render_summary_table(summaries), end="")
    if errors and not resolved["allow_failures"]:
        return 1
    return 0


def cmd_report(args) -> int:
    rows = []
    for path in args.rows:
        rows.extend(read_rows_csv(path))
    baselines = load_baselines(args.baselines) if args.baselines else None
    summaries = summarize(rows, slice_mean=args.slice_mean)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / "summary.json", summary_json(summaries, baselines))
    table = render_summary_table(summaries, baselines)
    atomic_write_text(out_dir / "delta_table.txt", table)
    atomic_write_text(out_dir / "radar.json", json.dumps(radar_data(summaries), indent=2) + "\n")
    if args.per_case:
        method_a, method_b = args.per_case
        rows_a = [r for r in rows if r.method_id == method_a]
        rows_b = [r for r in rows if r.method_id == method_b]
        atomic_write_text(
            out_dir / "per_case.csv", per_case_series_csv(rows_a, rows_b, method_a, method_b)
        )
    if args.check_reference:
        report = conformance_report()
        atomic_write_text(
            out_dir / "reference_conformance.json", json.dumps(report, indent=2) + "\n"
        )
        if report["unexpected_discrepancies"]:
            print("reference tables: UNEXPECTED discrepancies found")
            return 1
        print(
            f"reference tables: {report['arrow_checks']} arrows checked, "
            f"{len(report['known_discrepancies'])} known discrepancy flagged"
        )
    print(table, end="")
    print(f"report written to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="conceptseg", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest against schema and invariants")
    p.add_argument("manifest")
    p.add_argument("--lazy", action="store_true", help="skip file existence checks")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("split", help="assign a deterministic 4:1 train/test split")
    p.add_argument("manifest")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("toy-gen", help="emit a synthetic demo suite")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--dataset-id", default="toy-demo")
    p.add_argument("--cases", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--lexicon", default="disk,ring")
    p.add_argument("--targets", default="disk")
    p.add_argument("--vocab", default="disk,ring")
    p.add_argument("--misground", default="")
    p.add_argument("--phrase-override", default="",
                   help="label=phrase pairs when the registered phrase differs")
    p.add_argument("--box-rescue", action="store_true")
    p.add_argument("--dilate", type=int, default=0)
    p.add_argument("--erode", type=int, default=0)
    p.add_argument("--shift", type=int, default=0)
    p.set_defaults(func=cmd_toy_gen)

    p = sub.add_parser("eval", help="run one evaluation setting over a manifest")
    p.add_argument("--manifest")
    p.add_argument("--mode", choices=[m.value for m in PromptMode])
    p.add_argument("--backend", help="toy | toy:DIR | remote:URL | replay:PATH")
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--connectivity", type=int, choices=[4, 8])
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--negative-frames", action="store_true", default=False)
    p.add_argument("--baselines", help="JSON file of per-dataset baseline means")
    p.add_argument("--method-id")
    p.add_argument("--out-dir")
    p.add_argument("--record", help="record backend traffic to this fixture file")
    p.add_argument("--allow-failures", action="store_true", default=False)
    p.add_argument("--slice-mean", action="store_true", default=False)
    p.add_argument("--config", help="JSON config file (flags override)")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("agent", help="run agent sessions over a split")
    p.add_argument("--manifest")
    p.add_argument("--backend")
    p.add_argument("--mllm", help="mock:accept-iff-improved | mock:script:FILE | live:URL")
    p.add_argument("--candidates", help="comma-separated phrase ladder for the mock")
    p.add_argument("--budget", type=int)
    p.add_argument("--split", choices=["train", "test"])
    p.add_argument("--method-id")
    p.add_argument("--out-dir")
    p.add_argument("--allow-failures", action="store_true", default=False)
    p.add_argument("--config")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_agent)

    p = sub.add_parser("report", help="merge row files into tables and figure data")
    p.add_argument("--rows", nargs="+", required=True)
    p.add_argument("--baselines")
    p.add_argument("--per-case", nargs=2, metavar=("METHOD_A", "METHOD_B"))
    p.add_argument("--out-dir", default="report")
    p.add_argument("--slice-mean", action="store_true", default=False)
    p.add_argument("--check-reference", action="store_true",
                   help="also run the bundled reference-table conformance checks")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConceptSegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
