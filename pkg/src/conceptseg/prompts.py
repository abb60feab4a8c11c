"""Concept phrases, the bundled phrase registry, and geometric prompt construction."""

from __future__ import annotations

import enum
import json
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy import ndimage

from .core import BinaryMask, BoxPrompt
from .errors import EmptyMaskError, PhraseError, UnknownDatasetError

_WORD_RE = re.compile(r"^[a-z0-9]+(?:-[a-z0-9]+)*$")
MAX_PHRASE_WORDS = 3


@dataclass(frozen=True)
class ConceptPhrase:
    """A normalized target phrase: lowercase, 1-3 space-separated words."""

    text: str
    word_count: int

    def __post_init__(self):
        words = self.text.split(" ")
        if len(words) != self.word_count:
            raise PhraseError(f"word_count {self.word_count} does not match {self.text!r}")
        if not 1 <= self.word_count <= MAX_PHRASE_WORDS:
            raise PhraseError(
                f"phrase must have 1..{MAX_PHRASE_WORDS} words, got {self.word_count}: {self.text!r}"
            )
        for word in words:
            if not _WORD_RE.match(word):
                raise PhraseError(
                    f"word {word!r} must be alphanumeric (hyphens permitted)"
                )

    def __str__(self) -> str:
        return self.text


def validate_phrase(raw: str) -> ConceptPhrase:
    """Normalize and validate a raw phrase.

    Normalization trims, collapses runs of whitespace to single spaces, and
    lowercases. Phrases longer than three words are rejected.
    """
    if not isinstance(raw, str):
        raise PhraseError(f"phrase must be a string, got {type(raw).__name__}")
    text = " ".join(raw.strip().lower().split())
    if not text:
        raise PhraseError("phrase is empty")
    words = text.split(" ")
    if len(words) > MAX_PHRASE_WORDS:
        raise PhraseError(
            f"phrase has {len(words)} words, limit is {MAX_PHRASE_WORDS}: {text!r}"
        )
    return ConceptPhrase(text=text, word_count=len(words))


class PromptMode(enum.Enum):
    TEXT = "TEXT"
    TEXT_BOX = "TEXT_BOX"
    BOX = "BOX"


@dataclass(frozen=True)
class PromptBundle:
    """One segmentation request: a phrase, a box, or both."""

    mode: PromptMode
    phrase: ConceptPhrase | None = None
    box: BoxPrompt | None = None

    def __post_init__(self):
        if self.mode is PromptMode.TEXT:
            if self.phrase is None or self.box is not None:
                raise ValueError("TEXT mode requires a phrase and no box")
        elif self.mode is PromptMode.TEXT_BOX:
            if self.phrase is None or self.box is None:
                raise ValueError("TEXT_BOX mode requires both phrase and box")
        elif self.mode is PromptMode.BOX:
            if self.box is None or self.phrase is not None:
                raise ValueError("BOX mode requires a box and no phrase")

    @classmethod
    def text(cls, phrase: str | ConceptPhrase) -> "PromptBundle":
        if isinstance(phrase, str):
            phrase = validate_phrase(phrase)
        return cls(PromptMode.TEXT, phrase=phrase)

    @classmethod
    def text_box(cls, phrase: str | ConceptPhrase, box: BoxPrompt) -> "PromptBundle":
        if isinstance(phrase, str):
            phrase = validate_phrase(phrase)
        return cls(PromptMode.TEXT_BOX, phrase=phrase, box=box)

    @classmethod
    def box_only(cls, box: BoxPrompt) -> "PromptBundle":
        return cls(PromptMode.BOX, box=box)


# ---------------------------------------------------------------------------
# Connected components and box construction
# ---------------------------------------------------------------------------


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return np.ones((3, 3), dtype=bool)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def count_components(mask: BinaryMask, connectivity: int = 8) -> int:
    _, n = ndimage.label(mask.bits, structure=_structure(connectivity))
    return int(n)


def largest_component_box(gt: BinaryMask, connectivity: int = 8) -> BoxPrompt:
    """Tight bounding box of the largest connected component.

    Ties on pixel count are broken by the component containing the smallest
    row-major foreground index, so the result is a pure function of the bit
    grid. Default connectivity is 8 (diagonally-touching pixels merge);
    every evaluation report records the connectivity actually used.
    """
    labels, n = ndimage.label(gt.bits, structure=_structure(connectivity))
    if n == 0:
        raise EmptyMaskError("cannot derive a box from an empty mask")
    counts = np.bincount(labels.ravel())[1:]
    best = counts.max()
    tied = np.flatnonzero(counts == best) + 1
    if len(tied) == 1:
        chosen = int(tied[0])
    else:
        flat = labels.ravel()
        firsts = [int(np.argmax(flat == lab)) for lab in tied]
        chosen = int(tied[int(np.argmin(firsts))])
    ys, xs = np.nonzero(labels == chosen)
    return BoxPrompt(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def mask_bbox(mask: BinaryMask) -> BoxPrompt | None:
    """Tight box over all foreground pixels, or None for an empty mask."""
    ys, xs = np.nonzero(mask.bits)
    if ys.size == 0:
        return None
    return BoxPrompt(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


# ---------------------------------------------------------------------------
# Phrase registry (bundled JSON, one entry per supported dataset)
# ---------------------------------------------------------------------------

_REGISTRY_CACHE: dict | None = None


def _load_registry() -> dict:
    global _REGISTRY_CACHE
    if _REGISTRY_CACHE is None:
        text = (resources.files("conceptseg") / "data" / "phrase_registry.json").read_text()
        _REGISTRY_CACHE = json.loads(text)
    return _REGISTRY_CACHE


def registry_dataset_ids() -> list[str]:
    return sorted(_load_registry()["datasets"].keys())


def registry_phrases(dataset_id: str) -> list[tuple[str, ConceptPhrase]]:
    """Targets and validated phrases registered for a dataset.

    Registry entries store display casing (e.g. "RNFL"); the returned
    phrases are normalized so backends never see case variance.
    """
    datasets = _load_registry()["datasets"]
    if dataset_id not in datasets:
        raise UnknownDatasetError(f"no registry entry for dataset {dataset_id!r}")
    return [
        (entry["target_id"], validate_phrase(entry["phrase"]))
        for entry in datasets[dataset_id]
    ]


def registry_display_phrases(dataset_id: str) -> list[tuple[str, str]]:
    """Same as registry_phrases but with the stored display casing."""
    datasets = _load_registry()["datasets"]
    if dataset_id not in datasets:
        raise UnknownDatasetError(f"no registry entry for dataset {dataset_id!r}")
    return [(entry["target_id"], entry["phrase"]) for entry in datasets[dataset_id]]
