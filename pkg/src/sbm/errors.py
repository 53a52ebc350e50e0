"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ConfigError(ValueError):
    """A configuration value violates a module precondition."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class PathFailure(RuntimeError):
    """A simulated path produced a non-finite value."""

    def __init__(self, path: int, step: int, cell: int, detail: str = "non-finite value"):
        super().__init__(f"path {path} failed at step {step}, cell {cell}: {detail}")
        self.path = path
        self.step = step
        self.cell = cell
