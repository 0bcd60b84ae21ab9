"""Exception hierarchy shared by the library and the command line.

Every error carries the process exit code the CLI reports for it:
0 ok, 2 config, 3 I/O, 4 data, 5 checkpoint.
"""

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_DATA = 4
EXIT_CHECKPOINT = 5


class EgmTriageError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = EXIT_DATA


# Configuration


class ConfigError(EgmTriageError):
    exit_code = EXIT_CONFIG


class InvalidConfig(ConfigError):
    """A network or generator configuration violates its invariants."""


# I/O


class DatasetIOError(EgmTriageError):
    exit_code = EXIT_IO


# Data


class InvalidSignal(EgmTriageError):
    pass


class AllZeroSignal(EgmTriageError):
    pass


class SignalTooShort(EgmTriageError):
    pass


class WrongLength(EgmTriageError):
    pass


class OverlappingSplit(EgmTriageError):
    pass


class UnassignedPatient(EgmTriageError):
    pass


class MissingAnnotations(EgmTriageError):
    pass


class InvalidCycleLength(EgmTriageError):
    pass


class TooFewPeaks(EgmTriageError):
    pass


class InconsistentInput(EgmTriageError):
    pass


class EmptyGrid(EgmTriageError):
    pass


class UnlabeledData(EgmTriageError):
    pass


class ShapeMismatch(EgmTriageError):
    pass


class InvalidLabel(EgmTriageError):
    pass


class WrongInputLength(EgmTriageError):
    pass


class LengthMismatch(EgmTriageError):
    pass


class EmptyInput(EgmTriageError):
    pass


class EmptyMatrix(EgmTriageError):
    pass


class NonFiniteTensor(EgmTriageError):
    """A forward or backward pass produced NaN or infinity."""


# Checkpoints


class CheckpointError(EgmTriageError):
    exit_code = EXIT_CHECKPOINT


class CorruptCheckpoint(CheckpointError):
    pass


class VersionMismatch(CheckpointError):
    pass


class KeySetMismatch(CheckpointError):
    pass
