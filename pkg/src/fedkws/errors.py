"""Shared exception types with CLI exit-code mapping."""

from __future__ import annotations


class ConfigError(ValueError):
    """Invalid configuration or bad user input (CLI exit code 2)."""


class ConsistencyError(ValueError):
    """Inconsistent data artifacts, e.g. overlapping train/eval ids (exit 3)."""


class FormatError(ValueError):
    """Malformed binary or text artifact (exit 4)."""

    def __init__(self, message: str, *, offset: int | None = None,
                 field: str | None = None):
        detail = message
        if field is not None:
            detail += f" [field: {field}]"
        if offset is not None:
            detail += f" [byte offset: {offset}]"
        super().__init__(detail)
        self.offset = offset
        self.field = field
