from __future__ import annotations


class InfoCltError(Exception):
    """Base class for every error raised by infoclt."""


class InvalidParams(InfoCltError):
    pass


class DomainTooNarrow(InfoCltError):
    pass


class DegenerateDensity(InfoCltError):
    pass


class EmptyWindow(InfoCltError):
    pass


class GridMismatch(InfoCltError):
    pass


class AliasingError(InfoCltError):
    pass


class MemoryBudgetError(InfoCltError):
    pass


class ConvergenceError(InfoCltError):
    pass


class DisconnectedSupport(InfoCltError):
    pass


class InfiniteFisher(InfoCltError):
    """Raised by operations whose precondition is a finite Fisher information."""


class ConfigError(InfoCltError):
    pass


class OutputError(InfoCltError):
    pass
