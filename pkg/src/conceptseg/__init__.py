"""conceptseg: promptable concept segmentation evaluation harness.

Pieces: pixel-domain types and codecs (core), manifest-driven datasets,
concept phrases and box prompts, pluggable segmentation backends (remote,
replay, synthetic oracle), Dice metrics and reporting, the evaluation
protocol runner, the planner-driven refinement agent, and conformance
checks over the bundled published reference results.
"""

__version__ = "0.1.0"

from .core import BinaryMask, BoxPrompt, RasterImage, RleMask, decode_rle, encode_rle, overlay
from .metrics import EvalRow, MethodSummary, dice, summarize, volume_dice
from .prompts import ConceptPhrase, PromptBundle, PromptMode, largest_component_box, validate_phrase

__all__ = [
    "__version__",
    "BinaryMask",
    "BoxPrompt",
    "RasterImage",
    "RleMask",
    "encode_rle",
    "decode_rle",
    "overlay",
    "dice",
    "volume_dice",
    "summarize",
    "EvalRow",
    "MethodSummary",
    "ConceptPhrase",
    "PromptBundle",
    "PromptMode",
    "validate_phrase",
    "largest_component_box",
]
