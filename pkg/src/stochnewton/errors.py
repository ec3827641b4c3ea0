"""Exception types shared across the package."""

from __future__ import annotations


class ParseError(ValueError):
    """Malformed LIBSVM input. ``line`` is 1-based, or None for file-level errors."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class SamplingExhausted(RuntimeError):
    """A single-pass index stream has handed out every index it owns."""


class DivergenceError(FloatingPointError):
    """An iterate blew up (non-finite or norm above the guard)."""

    def __init__(self, message: str, machine: int | None = None, step: int | None = None):
        self.machine = machine
        self.step = step
        super().__init__(message)


class ConvergenceError(RuntimeError):
    """Newton reference solve hit its iteration cap before the tolerance."""

    def __init__(self, message: str, grad_norm: float, x=None):
        self.grad_norm = grad_norm
        self.x = x
        super().__init__(message)


class ConfigError(ValueError):
    """Invalid run configuration, e.g. a round budget that cannot be met."""

    def __init__(self, message: str, min_rounds: int | None = None):
        self.min_rounds = min_rounds
        super().__init__(message)
