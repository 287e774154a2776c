"""Exception hierarchy. The CLI maps each family to an exit code."""


class FacebenchError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(FacebenchError):
    """Malformed or inconsistent estimator / experiment configuration."""


class DataError(FacebenchError):
    """Unreadable, missing or invalid input data."""


class MeshFormatError(DataError):
    pass


class NumericalError(FacebenchError):
    """A numerical routine failed (singular system, degenerate geometry)."""


class StageError(FacebenchError):
    """Wraps a failure inside one pipeline stage, tagged with subject and stage."""

    def __init__(self, stage, subject, cause):
        self.stage = stage
        self.subject = subject
        self.cause = cause
        super().__init__(f"stage {stage!r} failed for subject {subject!r}: {cause}")
