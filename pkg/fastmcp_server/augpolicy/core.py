"""Structured logging and error types shared by the augmentation-policy package."""

from __future__ import annotations

import json
import logging
import os
from datetime import datetime, timezone
from typing import Any, Dict, Optional, Type


class JSONFormatter(logging.Formatter):
    """Minimal JSON log formatter for structured log output."""

    def format(self, record: logging.LogRecord) -> str:  # noqa: D401 - simple override
        log_entry = {
            "timestamp": datetime.now(timezone.utc).isoformat().replace("+00:00", "Z"),
            "level": record.levelname,
            "message": record.getMessage(),
            "logger": record.name,
        }
        if record.exc_info:
            log_entry["exception"] = self.formatException(record.exc_info)
        context = getattr(record, "context", None)
        if context:
            log_entry["context"] = context
        return json.dumps(log_entry, ensure_ascii=False, default=str)


logger = logging.getLogger("augpolicy")
if not logger.handlers:
    handler = logging.StreamHandler()
    handler.setFormatter(JSONFormatter())
    logger.addHandler(handler)
logger.setLevel(os.environ.get("AUGPOLICY_LOG_LEVEL", "INFO").upper())
logger.propagate = False


class AugPolicyError(RuntimeError):
    """Base failure carrying an optional hint and serialized context."""

    def __init__(
        self,
        message: str,
        *,
        hint: Optional[str] = None,
        context: Optional[Dict[str, Any]] = None,
    ) -> None:
        self.message = message
        self.hint = hint
        self.context = dict(context) if context else {}
        super().__init__(_render(message, hint, self.context))


class ShapeError(AugPolicyError):
    """An operation received tensors violating its shape rule."""


class ConfigError(AugPolicyError):
    """Configuration keys or values are invalid."""


class DataFormatError(AugPolicyError):
    """A dataset file is truncated or malformed."""


class CheckpointError(AugPolicyError):
    """A checkpoint or snapshot cannot be read or does not match."""


class NotPrimedError(AugPolicyError):
    """The loss tracker has no frozen average yet."""


class NonFiniteError(AugPolicyError):
    """A loss or gradient became NaN or infinite."""


def _render(message: str, hint: Optional[str], context: Optional[Dict[str, Any]]) -> str:
    sections: list[str] = [message]
    if hint:
        sections.append(f"Hint: {hint}")
    if context:
        try:
            context_blob = json.dumps(context, default=str, indent=2)
        except TypeError:
            context_blob = str(context)
        sections.append(f"Context:\n{context_blob}")
    return "\n".join(sections)


def _error(
    message: str,
    *,
    error: Type[AugPolicyError] = AugPolicyError,
    hint: Optional[str] = None,
    context: Optional[Dict[str, Any]] = None,
) -> AugPolicyError:
    """Create an error of the requested type with optional hint and context."""

    return error(message, hint=hint, context=context)


def _ensure(
    condition: bool,
    message: str,
    *,
    error: Type[AugPolicyError] = AugPolicyError,
    hint: Optional[str] = None,
    context: Optional[Dict[str, Any]] = None,
) -> None:
    """Raise ``error`` with optional hint/context when a condition is false."""

    if not condition:
        raise _error(message, error=error, hint=hint, context=context)
