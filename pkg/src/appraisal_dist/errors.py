"""Exception hierarchy. ``exit_code`` is what the CLI returns for each family."""

from __future__ import annotations


class AppraisalError(Exception):
    exit_code = 2


class ConfigError(AppraisalError):
    exit_code = 1


class DataError(AppraisalError, ValueError):
    exit_code = 2


class LayoutError(DataError):
    pass


class NoValidRecordsError(DataError):
    pass


class UnmappedDimensionError(DataError, KeyError):
    def __init__(self, source: str, name: str):
        self.source = source
        self.name = name
        super().__init__(f"{source} dimension {name!r} has no canonical equivalent")

    def __str__(self) -> str:  # KeyError would repr() the message
        return self.args[0]


class InsufficientRepeatsError(DataError):
    pass


class IncompleteProfileError(DataError):
    pass


class MissingPredictionError(DataError, KeyError):
    def __str__(self) -> str:
        return self.args[0] if self.args else "missing prediction"


class MissingArtifactError(DataError):
    def __init__(self, stage: str, path):
        self.stage = stage
        self.path = path
        super().__init__(f"stage {stage!r} requires {path}, which does not exist; run the upstream stage first")


class SamplingError(AppraisalError):
    """An item's replies were mostly or entirely unparseable."""

    exit_code = 3


class EndpointError(AppraisalError):
    exit_code = 3


class QuotaExhaustedError(EndpointError):
    pass


class StageError(AppraisalError):
    """Wraps a module error with the name of the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 2)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
