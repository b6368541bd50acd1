"""Exception hierarchy. Each class carries the CLI exit code it maps to."""

from __future__ import annotations


class OODError(Exception):
    exit_code = 1


class DataError(OODError, ValueError):
    """Malformed, inconsistent, or missing input data."""

    exit_code = 3


class NumericalError(OODError, ArithmeticError):
    """A numerical routine failed to converge or produced non-finite output."""

    exit_code = 4


class UsageError(OODError):
    """Bad command-line usage or an unknown name."""

    exit_code = 2
