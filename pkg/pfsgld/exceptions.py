"""
Error hierarchy for pfsgld.

Every error carries the exit code the CLI returns for it:
2 config error, 3 data error, 4 numerical failure.
"""
from typing import Optional


class PfsgldError(Exception):
    """Base class for all pfsgld errors."""

    exit_code = 1


class ConfigError(PfsgldError):
    """Invalid or inconsistent configuration."""

    exit_code = 2


class DataError(PfsgldError):
    """Malformed input data."""

    exit_code = 3

    def __init__(self, message: str, index: Optional[int] = None, path: Optional[str] = None):
        self.index = index
        self.path = path
        details = []
        if path is not None:
            details.append(f"path={path}")
        if index is not None:
            details.append(f"index={index}")
        if details:
            message = f"{message} ({', '.join(details)})"
        super().__init__(message)


class MissingReferenceError(DataError):
    """A bias sweep needs a cached reference gradient that does not exist."""

    def __init__(self, path: str):
        super().__init__(
            "Reference gradient cache not found; generate it first with "
            "`pfsgld make-reference`",
            path=path,
        )


class DomainError(PfsgldError, ValueError):
    """Parameters or arguments outside their valid region."""

    exit_code = 4


class ContractError(PfsgldError):
    """Inputs violate an interface contract (e.g. inconsistent augmented state)."""

    exit_code = 4


class UnsupportedModelError(PfsgldError):
    """Operation not available for the requested model."""

    exit_code = 4


class NumericError(PfsgldError):
    """Non-finite values where finite ones are required."""

    exit_code = 4


class DegenerateFilterError(NumericError):
    """All particle weights vanished at some time step."""

    def __init__(self, t: int):
        self.t = t
        super().__init__(f"Particle filter degenerated: all weights are zero at t={t}")


class SamplerAbortError(NumericError):
    """SGLD gave up after too many consecutive filter failures."""

    def __init__(self, step: int, failures: int, last_error: Exception):
        self.step = step
        self.failures = failures
        super().__init__(
            f"SGLD aborted at step {step} after {failures} consecutive filter "
            f"failures; last error: {last_error}"
        )
