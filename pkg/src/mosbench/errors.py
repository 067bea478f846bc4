"""Exception hierarchy shared across the package."""

from __future__ import annotations


class MosBenchError(Exception):
    """Base class for every error raised by mosbench."""


class ManifestError(MosBenchError):
    """A manifest row or file failed validation.

    ``row`` is the 1-based data row number (header excluded) when the
    failure is attributable to a single row.
    """

    def __init__(self, message: str, *, row: int | None = None, field: str | None = None):
        self.row = row
        self.field = field
        location = []
        if row is not None:
            location.append(f"row {row}")
        if field is not None:
            location.append(f"field '{field}'")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(prefix + message)


class SplitMissingError(ManifestError):
    pass


class SubsampleError(MosBenchError):
    pass


class AudioTooShortError(MosBenchError):
    pass


class ShapeError(MosBenchError):
    def __init__(self, what: str, expected, actual):
        self.expected = expected
        self.actual = actual
        super().__init__(f"{what}: expected shape {expected}, got {actual}")


class EmptySequenceError(MosBenchError):
    pass


class SslProviderUnavailable(MosBenchError):
    pass


class CheckpointError(MosBenchError):
    pass


class TrainingDiverged(MosBenchError):
    def __init__(self, epoch: int, loss: float):
        self.epoch = epoch
        self.loss = loss
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")


class MappingDegenerate(MosBenchError):
    """Predictions are constant, so no first-degree mapping can be fitted."""

    code = "MAPPING_DEGENERATE"


class CorrelationDegenerate(MosBenchError):
    code = "CORR_DEGENERATE"


class StatsInputError(MosBenchError, ValueError):
    """Samples violate a test's preconditions (too few groups or observations)."""


class StatsDegenerate(MosBenchError):
    code = "DEGENERATE"


class ConfigError(MosBenchError):
    """Invalid run configuration; ``path`` names the offending file when there is one."""

    def __init__(self, message: str, *, path=None):
        self.path = None if path is None else str(path)
        super().__init__(message)
