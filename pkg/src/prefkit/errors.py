"""Exception hierarchy shared across the package."""


class PrefkitError(Exception):
    """Base class for all package-raised errors."""


class ContractViolation(PrefkitError):
    """A documented precondition of a public operation was broken."""


class ConfigError(PrefkitError):
    """A config file or config object failed validation."""


class DataError(PrefkitError):
    """An input data file is malformed or inconsistent."""


class TokenizeError(DataError):
    """Text contains a character outside the task alphabet."""


class NumericAbort(PrefkitError):
    """Training or evaluation hit a non-finite value and stopped."""


class CheckpointError(PrefkitError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format_version is not supported."""


class CheckpointShapeError(CheckpointError):
    """A tensor in the checkpoint has an unexpected shape."""


class CheckpointTruncatedError(CheckpointError):
    """Payload is shorter than the manifest says it should be."""


class CheckpointChecksumError(CheckpointError):
    """Payload bytes do not match the recorded checksum."""
