"""Exception types shared across the package."""


class LaneError(Exception):
    """Base class for all package errors."""


class ParseError(LaneError):
    """An input file row or record could not be parsed."""


class IntegrityError(LaneError):
    """Input data contradicts itself (e.g. one item id with two titles)."""


class ConfigError(LaneError):
    """Invalid configuration or mismatched tensor dimensions."""


class EncodingError(LaneError):
    """A text encoder failed on a specific input."""


class MalformedResponse(LaneError):
    """An LLM response does not follow the required template."""


class NumericError(LaneError):
    """Non-finite values appeared during a forward or backward pass."""


class SamplingError(LaneError):
    """No eligible item is left to sample from."""


class ProtocolError(LaneError):
    """The evaluation protocol cannot be satisfied (e.g. too few negatives)."""


class MissingArtifactError(LaneError):
    """A pipeline command requires an artifact another command produces."""
