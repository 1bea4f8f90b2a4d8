"""Input validation for tool arguments, CLI flags and config keys."""

from __future__ import annotations

import math
import re
from typing import Any, Iterable, List, Optional, Sequence

from .core import ConfigError


class ValidationError(ConfigError):
    """Raised when input validation fails."""


class InputValidator:
    """Validation helpers shared by the CLI, the config layer and the MCP tools."""

    CONFIG_KEY_PATTERN = re.compile(r"^[a-z_][a-z0-9_]*(\.[a-z_][a-z0-9_]*)*$")
    MAX_LIST_LENGTH = 1_000

    @classmethod
    def validate_integer(
        cls,
        value: Any,
        field_name: str,
        *,
        min_value: Optional[int] = None,
        max_value: Optional[int] = None,
        allow_none: bool = False,
    ) -> Optional[int]:
        """Validate integer input."""

        if value is None:
            if allow_none:
                return None
            raise ValidationError(f"{field_name} cannot be None")

        if not isinstance(value, int) or isinstance(value, bool):
            raise ValidationError(f"{field_name} must be an integer, got {type(value).__name__}")

        if min_value is not None and value < min_value:
            raise ValidationError(f"{field_name} must be at least {min_value}")

        if max_value is not None and value > max_value:
            raise ValidationError(f"{field_name} must be at most {max_value}")

        return value

    @classmethod
    def validate_float(
        cls,
        value: Any,
        field_name: str,
        *,
        min_value: Optional[float] = None,
        max_value: Optional[float] = None,
        exclusive_min: bool = False,
        exclusive_max: bool = False,
    ) -> float:
        """Validate a finite real number, accepting ints."""

        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ValidationError(f"{field_name} must be a number, got {type(value).__name__}")
        value = float(value)
        if not math.isfinite(value):
            raise ValidationError(f"{field_name} must be finite")

        if min_value is not None:
            if exclusive_min and value <= min_value:
                raise ValidationError(f"{field_name} must be greater than {min_value}")
            if not exclusive_min and value < min_value:
                raise ValidationError(f"{field_name} must be at least {min_value}")
        if max_value is not None:
            if exclusive_max and value >= max_value:
                raise ValidationError(f"{field_name} must be less than {max_value}")
            if not exclusive_max and value > max_value:
                raise ValidationError(f"{field_name} must be at most {max_value}")
        return value

    @classmethod
    def validate_probability(cls, value: Any, field_name: str) -> float:
        """Validate a probability strictly inside (0, 1)."""

        return cls.validate_float(
            value, field_name, min_value=0.0, max_value=1.0, exclusive_min=True, exclusive_max=True
        )

    @classmethod
    def validate_choice(cls, value: Any, field_name: str, choices: Iterable[str]) -> str:
        """Validate that ``value`` is one of ``choices``."""

        options = list(choices)
        if not isinstance(value, str):
            raise ValidationError(f"{field_name} must be a string, got {type(value).__name__}")
        if value not in options:
            raise ValidationError(f"{field_name} must be one of {options}, got {value!r}")
        return value

    @classmethod
    def validate_config_key(cls, key: Any, known: Optional[Sequence[str]] = None) -> str:
        """Validate a dotted config key and optionally check it is known."""

        if not isinstance(key, str) or not cls.CONFIG_KEY_PATTERN.match(key):
            raise ValidationError(
                f"Config key {key!r} is malformed",
                hint="Keys are lowercase dotted paths such as 'reward.th'.",
            )
        if known is not None and key not in known:
            close = [k for k in known if k.split(".")[-1] == key.split(".")[-1]]
            raise ValidationError(
                f"Unknown config key {key!r}",
                hint=f"Did you mean one of {close}?" if close else "Run 'augpolicy pretrain --help' for the flag list.",
                context={"key": key},
            )
        return key

    @classmethod
    def validate_number_list(
        cls,
        values: Any,
        field_name: str,
        *,
        min_length: int = 1,
    ) -> List[float]:
        """Validate a non-empty list of finite numbers."""

        if not isinstance(values, (list, tuple)):
            raise ValidationError(f"{field_name} must be a list, got {type(values).__name__}")
        if len(values) < min_length:
            raise ValidationError(f"{field_name} must have at least {min_length} items")
        if len(values) > cls.MAX_LIST_LENGTH:
            raise ValidationError(f"{field_name} exceeds maximum length of {cls.MAX_LIST_LENGTH}")
        return [cls.validate_float(v, f"{field_name}[{i}]") for i, v in enumerate(values)]
