"""Exception hierarchy shared across the harness."""


class ConceptSegError(Exception):
    """Base class for all harness errors."""


class DimensionMismatchError(ConceptSegError):
    """Two pixel grids that must match in size do not."""


class MalformedEncodingError(ConceptSegError):
    """A run-length encoding violates its invariants."""


class PhraseError(ConceptSegError):
    """A concept phrase fails validation (empty, >3 words, bad characters)."""


class EmptyMaskError(ConceptSegError):
    """An operation that needs at least one foreground pixel got none."""


class UnknownDatasetError(ConceptSegError):
    """Dataset id not present in the phrase registry."""


class ManifestError(ConceptSegError):
    """A dataset manifest is schema-invalid or violates an invariant."""


class SplitError(ConceptSegError):
    """Split requested on a manifest whose cases are already assigned."""


class BackendError(ConceptSegError):
    """A segmentation backend failed to produce a result."""


class TransportError(BackendError):
    """Network-level failure talking to a remote backend."""


class MalformedResponseError(BackendError):
    """A backend response that cannot be decoded into a valid result."""


class ReplayMissError(BackendError):
    """Replay fixture has no recorded response for a request digest."""


class UnknownModeError(BackendError):
    """Prompt mode not supported by the target backend."""


class InfeasiblePackingError(ConceptSegError):
    """Synthetic scene generator could not place objects without overlap."""


class ActionParseError(ConceptSegError):
    """Planner reply did not contain exactly one valid action object."""


class MllmTransportError(ConceptSegError):
    """Network-level failure talking to a planner model endpoint."""


class ConfigError(ConceptSegError):
    """Invalid or contradictory run configuration."""
