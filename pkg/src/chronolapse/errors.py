"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 usage/config,
3 data/IO, 4 runtime.
"""


class ChronoError(Exception):
    """Base error; ``code`` names the failure, ``exit_code`` is the CLI status."""

    exit_code = 4
    code = "RUNTIME"

    def __init__(self, *args, code: str | None = None):
        super().__init__(*args)
        if code is not None:
            self.code = code


class ConfigError(ChronoError, ValueError):
    exit_code = 2
    code = "CONFIG"


class ModeMismatchError(ConfigError):
    code = "MODE_MISMATCH"


class DataError(ChronoError):
    exit_code = 3
    code = "DATA"


class ManifestError(DataError):
    code = "MANIFEST_PARSE"


class EmptyDatasetError(DataError):
    code = "EMPTY_DATASET"


class InsufficientFramesError(DataError, ValueError):
    code = "INSUFFICIENT_FRAMES"


class ChronoIOError(DataError, OSError):
    code = "IO_ERROR"


class OutputExistsError(ChronoIOError):
    code = "OUTPUT_EXISTS"


class WeightsLoadError(DataError):
    code = "WEIGHTS_LOAD"


class CorruptCheckpointError(DataError):
    code = "CORRUPT_CHECKPOINT"


class ConfigMismatchError(ConfigError):
    code = "CONFIG_MISMATCH"


class ShapeError(ChronoError, ValueError):
    code = "SHAPE_ERROR"


class EmptySetError(ChronoError, ValueError):
    code = "EMPTY_SET"


class DomainError(ChronoError, ValueError):
    code = "DOMAIN_ERROR"


class NonfiniteLossError(ChronoError, FloatingPointError):
    code = "NONFINITE_LOSS"


class NonconvergenceError(ChronoError, ArithmeticError):
    code = "NONCONVERGENCE"
