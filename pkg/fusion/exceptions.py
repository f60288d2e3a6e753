class FusionError(Exception):
    """Base class for every error raised by the fusion package."""


class DegenerateInput(FusionError):
    """The inputs carry no information to estimate a transform from."""


class ScaleUndetermined(FusionError):
    """Source translations coincide, so the similarity scale is fixed to 1."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InsufficientData(FusionError):
    """An agent's cache holds fewer frames than the alignment window needs."""


class SfmFailed(FusionError):
    """The localized SfM backend could not pose every input image."""


class EmptyPool(FusionError):
    """The training pool has no frames to sample."""


class EmptyBatch(FusionError):
    """A field training step was given no labeled points."""


class NoSemanticPayload(FusionError):
    """The frame carries no semantic image."""


class SceneError(FusionError):
    """A synthetic scene violates its construction invariants."""


class FormatError(FusionError):
    """A sidecar, checkpoint or snapshot file is malformed."""


class ProtocolError(FusionError):
    """Base class for wire protocol violations."""


class MalformedMessage(ProtocolError):
    """Bad magic, unknown type or a body that does not match its length."""


class TruncatedStream(ProtocolError):
    """The byte stream ended in the middle of a message."""
