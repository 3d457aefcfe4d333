"""Error categories raised by gpfeed and mapped to CLI exit codes."""
from __future__ import annotations

from typing import Any


class GpfeedError(Exception):
    """Base class; ``category`` and ``exit_code`` drive the CLI message."""

    category = "error"
    exit_code = 1


class ConfigError(GpfeedError):
    category = "config"
    exit_code = 2


class DataFormatError(GpfeedError):
    category = "data"
    exit_code = 3


class InvalidInputError(GpfeedError, ValueError):
    category = "input"
    exit_code = 4


class IllConditionedError(GpfeedError):
    """Cholesky factorization failed at every attempted jitter level."""

    category = "numerical"
    exit_code = 5

    def __init__(self, message: str, jitter_levels: list[float]) -> None:
        levels = ", ".join(f"{j:.3g}" for j in jitter_levels)
        super().__init__(f"{message} (attempted jitter: {levels})")
        self.jitter_levels = jitter_levels


class OptimizationFailedError(GpfeedError):
    """Every optimizer restart failed; ``trace`` holds what was recorded."""

    category = "optimization"
    exit_code = 6

    def __init__(self, message: str, trace: list[dict[str, Any]]) -> None:
        super().__init__(message)
        self.trace = trace


class DivergenceError(GpfeedError):
    category = "divergence"
    exit_code = 7


class InfeasibleTrajectoryError(GpfeedError, ValueError):
    category = "trajectory"
    exit_code = 8
