"""
Error types shared by the fraclab services
"""
from typing import Optional


class LabError(Exception):
    """Base class for every error raised by the lab services."""


class DomainError(LabError, ValueError):
    """An input lies outside the domain of an operation."""


class PrecisionExhaustedError(LabError):
    """Quadrature could not certify a value; the partial estimate is kept."""

    def __init__(self, reason: str, partial_estimate: complex = complex("nan"), abs_err: float = float("inf")):
        super().__init__(f"precision exhausted: {reason} (partial={partial_estimate!r}, abs_err={abs_err:.3e})")
        self.reason = reason
        self.partial_estimate = partial_estimate
        self.abs_err = abs_err


class AssemblyError(LabError):
    """A discrete operator failed one of its post-assembly checks."""


class DegenerateProfileError(LabError):
    """No usable dyadic annulus is left for a profile fit."""


class ConfigError(LabError, ValueError):
    """An experiment configuration could not be loaded or validated."""

    def __init__(self, message: str, field: Optional[str] = None, line: Optional[int] = None):
        where = []
        if field:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        prefix = f"{', '.join(where)}: " if where else ""
        super().__init__(f"{prefix}{message}")
        self.field = field
        self.line = line
