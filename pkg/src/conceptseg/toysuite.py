"""Build and reload desk-scale demo suites backed by the synthetic oracle.

A suite is an ordinary on-disk dataset (images, masks, manifest) plus a
toyworld.json sidecar recording the generation parameters, so the toy
backend can regenerate each case's scene deterministically and answer
prompts about images it re-reads from disk.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .backends.scenes import SceneSpec, SyntheticScene, generate_scene
from .backends.toy import Corruption, ToySuiteBackend, ToyWorldConfig
from .core import save_image, save_mask
from .datasets import DatasetManifest, load_manifest
from .errors import ConfigError

TOYWORLD_FILENAME = "toyworld.json"


@dataclass(frozen=True)
class ToySuiteSpec:
    dataset_id: str = "toy-demo"
    n_cases: int = 20
    seed: int = 0
    width: int = 64
    height: int = 64
    lexicon: tuple[str, ...] = ("disk", "ring")
    targets: tuple[str, ...] = ("disk",)
    shape_kinds: tuple[str, ...] = ("disk", "rectangle")
    split: str = "test"
    # Manifest phrase per target label when it should differ from the label
    # (lets a suite register a phrase the toy vocabulary does not know).
    phrase_overrides: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if self.n_cases < 1:
            raise ConfigError("n_cases must be >= 1")
        missing = set(self.targets) - set(self.lexicon)
        if missing:
            raise ConfigError(f"targets {sorted(missing)} not in lexicon")
        unknown = {label for label, _ in self.phrase_overrides} - set(self.targets)
        if unknown:
            raise ConfigError(f"phrase overrides for unknown targets {sorted(unknown)}")

    def phrase_for_label(self, label: str) -> str:
        return dict(self.phrase_overrides).get(label, label)

    def case_ids(self) -> list[str]:
        return [f"case_{i:04d}" for i in range(self.n_cases)]

    def scene_spec(self) -> SceneSpec:
        return SceneSpec(
            width=self.width,
            height=self.height,
            object_count=len(self.lexicon),
            shape_kinds=self.shape_kinds,
            lexicon=self.lexicon,
        )


def _case_seed(suite_seed: int, case_id: str) -> int:
    return int(hashlib.sha256(f"{suite_seed}:{case_id}".encode()).hexdigest()[:12], 16)


def scene_for_case(spec: ToySuiteSpec, case_id: str) -> SyntheticScene:
    return generate_scene(spec.scene_spec(), _case_seed(spec.seed, case_id))


def _target_id(label: str) -> str:
    return label.replace(" ", "_")


def write_toy_suite(spec: ToySuiteSpec, world: ToyWorldConfig, out_dir: str | Path) -> Path:
    """Generate the suite under out_dir; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    cases = []
    for case_id in spec.case_ids():
        scene = scene_for_case(spec, case_id)
        image_ref = f"images/{case_id}.png"
        save_image(scene.image, out_dir / image_ref)
        gt = {}
        for label in spec.targets:
            mask = scene.mask_for(label)
            if mask is None:
                raise ConfigError(f"scene for {case_id} has no object labeled {label!r}")
            mask_ref = f"masks/{case_id}__{_target_id(label)}.png"
            save_mask(mask, out_dir / mask_ref)
            gt[_target_id(label)] = [mask_ref]
        cases.append(
            {"case_id": case_id, "split": spec.split, "images": [image_ref], "gt": gt}
        )
    manifest_doc = {
        "dataset_id": spec.dataset_id,
        "modality": "us",
        "dimension": "d2",
        "targets": [
            {"target_id": _target_id(label), "phrase": spec.phrase_for_label(label)}
            for label in spec.targets
        ],
        "cases": cases,
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest_doc, indent=2) + "\n")
    (out_dir / TOYWORLD_FILENAME).write_text(
        json.dumps(
            {
                "suite": {
                    "dataset_id": spec.dataset_id,
                    "n_cases": spec.n_cases,
                    "seed": spec.seed,
                    "width": spec.width,
                    "height": spec.height,
                    "lexicon": list(spec.lexicon),
                    "targets": list(spec.targets),
                    "shape_kinds": list(spec.shape_kinds),
                    "split": spec.split,
                    "phrase_overrides": dict(spec.phrase_overrides),
                },
                "world": world_to_doc(world),
            },
            indent=2,
        )
        + "\n"
    )
    return manifest_path


def world_to_doc(world: ToyWorldConfig) -> dict:
    return {
        "vocabulary": sorted(world.vocabulary),
        "misground_map": dict(world.misground_map),
        "corruption": {
            "dilate_px": world.corruption.dilate_px,
            "erode_px": world.corruption.erode_px,
            "shift_px": world.corruption.shift_px,
        },
        "box_rescue": world.box_rescue,
        "seed": world.seed,
    }


def world_from_doc(doc: dict) -> ToyWorldConfig:
    return ToyWorldConfig(
        vocabulary=frozenset(doc.get("vocabulary", ())),
        misground_map=tuple(doc.get("misground_map", {}).items()),
        corruption=Corruption(**doc.get("corruption", {})),
        box_rescue=bool(doc.get("box_rescue", False)),
        seed=int(doc.get("seed", 0)),
    )


def load_toy_suite(suite_dir: str | Path) -> tuple[DatasetManifest, ToySuiteSpec, ToyWorldConfig]:
    suite_dir = Path(suite_dir)
    sidecar = json.loads((suite_dir / TOYWORLD_FILENAME).read_text())
    suite_doc = sidecar["suite"]
    spec = ToySuiteSpec(
        dataset_id=suite_doc["dataset_id"],
        n_cases=int(suite_doc["n_cases"]),
        seed=int(suite_doc["seed"]),
        width=int(suite_doc["width"]),
        height=int(suite_doc["height"]),
        lexicon=tuple(suite_doc["lexicon"]),
        targets=tuple(suite_doc["targets"]),
        shape_kinds=tuple(suite_doc["shape_kinds"]),
        split=suite_doc["split"],
        phrase_overrides=tuple(suite_doc.get("phrase_overrides", {}).items()),
    )
    manifest = load_manifest(suite_dir / "manifest.json")
    return manifest, spec, world_from_doc(sidecar["world"])


def toy_backend_for_suite(suite_dir: str | Path,
                          world_override: ToyWorldConfig | None = None) -> ToySuiteBackend:
    """Reconstruct the oracle backend for a suite on disk."""
    _, spec, world = load_toy_suite(suite_dir)
    scenes = {cid: scene_for_case(spec, cid) for cid in spec.case_ids()}
    return ToySuiteBackend(world_override or world, scenes)
