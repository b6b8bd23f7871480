"""Exception and warning types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for failures raised by dwelltrack stages."""


class ValidationError(PipelineError):
    """Malformed input data, file, or configuration."""


class NoOriginDetectable(PipelineError):
    """No residential-room dwell found in the night window on any day."""


class NoValidDays(PipelineError):
    """A resident has zero days meeting the validity threshold."""


class NormGap(PipelineError):
    """A valid observation day has no norm to compare against."""


class DegeneracyWarning(UserWarning):
    """Emitted when an operation falls back to a degenerate but defined result."""
