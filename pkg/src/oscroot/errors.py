"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class OscrootError(Exception):
    exit_code = 1


class ConfigError(OscrootError, ValueError):
    exit_code = 4


class DataQualityError(OscrootError):
    """Input data cannot be turned into a clean, uniformly sampled ChannelSet."""

    exit_code = 3


class RejectedSampleError(DataQualityError):
    def __init__(self, index, message=None):
        self.index = index
        super().__init__(message or f"non-finite phasor record at index {index}")


class ResamplingError(DataQualityError):
    pass


class InsufficientDataError(DataQualityError):
    pass


class NoDominantModeError(OscrootError):
    exit_code = 2


class NumericalError(OscrootError):
    exit_code = 5


class DegenerateDataError(NumericalError):
    pass


class IllConditionedTruncationError(NumericalError):
    pass


class UndefinedEigenvalueError(NumericalError):
    pass


class NoMatchingModeError(NumericalError):
    pass


class DegenerateModeError(NumericalError):
    pass
