"""Exception types shared across the package."""


class OverlayQAError(Exception):
    """Base class for all package errors."""


class ParameterError(OverlayQAError, ValueError):
    """An argument violates a documented precondition."""


class ConfigurationError(OverlayQAError, ValueError):
    """A config file, template registry, or knob combination is invalid."""


class SamplingExhaustedError(OverlayQAError, RuntimeError):
    """Rejection sampling hit its attempt budget; the constraint set is
    infeasible (or nearly so) for the configured parameters."""


class AmbiguityError(OverlayQAError, RuntimeError):
    """A geometric configuration admits no unique answer at the required
    margin or gap. Samplers reject on this; the verifier reports it."""


class UnsupportedFormatError(OverlayQAError, ValueError):
    """Image file is a format the pipeline does not accept."""


class DecodeError(OverlayQAError, ValueError):
    """Image file exists but cannot be decoded."""


class ManifestError(OverlayQAError, ValueError):
    """A dataset manifest violates the conversation-JSON schema."""


class MalformedRecordError(OverlayQAError, ValueError):
    """A sidecar record is structurally unusable for re-derivation."""
