"""Exception types shared across the package."""
from __future__ import annotations


class CalabiKRFError(Exception):
    """Base class for all package errors."""


class AnsatzError(CalabiKRFError):
    """A profile violates the Calabi ansatz conditions (positivity, asymptotics)."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class StepError(CalabiKRFError):
    """A flow step could not be completed at the requested step size."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class ConfigError(CalabiKRFError):
    """Malformed or inconsistent experiment configuration."""
