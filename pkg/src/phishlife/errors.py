"""Shared exception types."""


class PhishlifeError(Exception):
    """Base class for all toolkit errors."""


class IoFailure(PhishlifeError):
    """An input file could not be read."""
