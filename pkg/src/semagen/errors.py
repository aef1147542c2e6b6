"""Shared exception types."""


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration input."""


class PrerequisiteError(RuntimeError):
    """A pipeline phase was invoked without its required predecessor."""
