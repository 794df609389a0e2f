"""Exception types raised across the package."""

from __future__ import annotations


class RDNNError(Exception):
    """Base class for all package errors."""


class DataError(RDNNError, ValueError):
    """Invalid or insufficient market data.

    ``line`` is the 1-based CSV line number (header is line 1) when the
    problem can be pinned to a row.
    """

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line

    def __str__(self) -> str:
        msg = f"{type(self).__name__}: {self.args[0]}"
        if self.line is not None:
            msg += f" (line {self.line})"
        return msg


class MissingColumn(DataError):
    pass


class NonPositivePrice(DataError):
    pass


class NegativeVolume(DataError):
    pass


class DuplicateRow(DataError):
    pass


class EmptyIntersectionCalendar(DataError):
    pass


class EmptySeries(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class InvalidPeriods(DataError):
    pass


class HistoryTooShort(DataError):
    pass


class EnvError(RDNNError, ValueError):
    pass


class InvalidWeights(EnvError):
    pass


class NonPositiveGrossReturn(EnvError):
    pass


class BankruptWealth(EnvError):
    pass


class LengthMismatch(EnvError):
    pass


class EmptyReturns(EnvError):
    pass


class LogOfNonPositive(EnvError):
    pass


class UnknownAsset(EnvError, KeyError):
    pass


class ShapeMismatch(RDNNError, ValueError):
    pass


class EmptySlice(RDNNError, ValueError):
    pass


class NonFiniteGradient(RDNNError, FloatingPointError):
    pass


class InsufficientData(RDNNError, ValueError):
    pass


class SelectionError(RDNNError, ValueError):
    pass


class KTooLarge(SelectionError):
    pass


class DegenerateMask(SelectionError):
    pass


class PoolTooSmall(SelectionError):
    pass


class CalendarMismatch(RDNNError, ValueError):
    pass


class ConfigError(RDNNError, ValueError):
    """Malformed run configuration or override."""
