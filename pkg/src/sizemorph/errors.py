"""Exceptions raised across sizemorph."""

from __future__ import annotations

from typing import Optional


class SizeMorphError(Exception):
    """Base class for all sizemorph errors."""


class DimensionError(SizeMorphError, ValueError):
    """Non-positive or otherwise invalid grid dimensions."""


class ShapeError(SizeMorphError, ValueError):
    """Tensor shapes that do not line up."""


class ArgumentError(SizeMorphError, ValueError):
    """An argument outside its allowed range."""


class ConfigurationError(SizeMorphError):
    """Invalid or incomplete run configuration."""


class CheckpointError(SizeMorphError):
    """Unreadable checkpoint, or one written for a different configuration."""


class DatasetLoadError(SizeMorphError):
    """A dataset sample that is missing or corrupt."""

    def __init__(self, sample_id: str, reason: str):
        super().__init__(f"sample {sample_id}: {reason}")
        self.sample_id = sample_id
        self.reason = reason


class NonFiniteLossError(SizeMorphError):
    """A training step produced NaN/Inf."""

    def __init__(self, message: str, breakdown: Optional[dict[str, float]] = None):
        self.breakdown = breakdown or {}
        detail = ", ".join(f"{k}={v:.4g}" for k, v in self.breakdown.items())
        super().__init__(f"{message} ({detail})" if detail else message)


class ConfigurationWarning(UserWarning):
    """Configuration that is usable but probably not what was intended."""
