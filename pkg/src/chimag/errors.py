"""Exception hierarchy shared by every chimag module."""

from __future__ import annotations


class ChimagError(Exception):
    """Base class for all errors raised by chimag."""


class ValidationError(ChimagError, ValueError):
    """Invalid user input: bad parameters, malformed config, mismatched grids."""


class DomainError(ValidationError):
    """A value lies outside the domain of a physical model."""


class UndefinedChiralityError(DomainError):
    """Chirality requested for a resonator with no extrinsic coupling."""


class ParseError(ValidationError):
    """Malformed file content, with 1-based line and column when known."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f"line {line}"
            if column is not None:
                loc += f", column {column}"
            loc += ": "
        super().__init__(loc + message)


class ConfigError(ValidationError):
    """Scenario configuration is invalid."""


class ModelConsistencyError(ChimagError, ArithmeticError):
    """A passive model produced an unphysical result (negative absorption)."""


class SingularityError(ChimagError, ArithmeticError):
    """Resonant feedback made a scattering composition singular."""

    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message)


class NoResonanceError(ChimagError):
    """The spectrum contains no transmission dip to fit."""
