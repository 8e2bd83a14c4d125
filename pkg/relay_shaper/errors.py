"""Exception hierarchy for relay-shaper."""

from __future__ import annotations


class RelayShaperError(Exception):
    """Base class for every error raised by relay-shaper."""


class ContractViolation(RelayShaperError, ValueError):
    """An input violated a documented precondition (shape, definiteness, range)."""


class DegenerateChannelError(RelayShaperError):
    """A channel realization made a construction ill-posed."""


class ConfigError(RelayShaperError):
    """An experiment config could not be parsed or failed validation."""
