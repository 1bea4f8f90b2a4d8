"""Layered run configuration: defaults, then a ``key=value`` file, then flags."""

from __future__ import annotations

from pathlib import Path
from typing import Any, Dict, Iterable, Mapping, Optional, Union

from dotenv import dotenv_values
from pydantic import ValidationError as PydanticValidationError

from .core import ConfigError, logger
from .schemas import RunConfig
from .validators import InputValidator


def default_config() -> RunConfig:
    return RunConfig()


def _format(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(_format(v) for v in value)
    return str(value)


def flatten(tree: Mapping[str, Any], prefix: str = "") -> Dict[str, str]:
    """Nested mapping to ``{"section.key": "value"}`` with string values."""

    flat: Dict[str, str] = {}
    for key, value in tree.items():
        dotted = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, dotted + "."))
        else:
            flat[dotted] = _format(value)
    return flat


def unflatten(flat: Mapping[str, Any]) -> Dict[str, Any]:
    tree: Dict[str, Any] = {}
    for dotted, value in flat.items():
        node = tree
        *parents, leaf = dotted.split(".")
        for part in parents:
            node = node.setdefault(part, {})
        node[leaf] = value
    return tree


def known_keys() -> frozenset:
    return frozenset(flatten(default_config().model_dump()))


def parse_config_file(path: Union[str, Path]) -> Dict[str, str]:
    """Read a flat ``key=value`` file; ``#`` comments and blank lines are ignored."""

    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file {path} does not exist")
    values = dotenv_values(path)
    empty = [k for k, v in values.items() if v is None]
    if empty:
        raise ConfigError(
            f"Config file {path} has keys without values",
            hint="Write every entry as key=value.",
            context={"keys": empty},
        )
    return dict(values)


def parse_overrides(items: Iterable[str]) -> Dict[str, str]:
    """``["reward.th=1.5", ...]`` to a mapping; used by ``--set``."""

    out: Dict[str, str] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"Override {item!r} is not of the form key=value")
        out[key.strip()] = value.strip()
    return out


def resolve_config(
    file: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> RunConfig:
    """Merge defaults < file < overrides and validate the result."""

    known = known_keys()
    merged = flatten(default_config().model_dump())
    layers = []
    if file is not None:
        layers.append(("file", parse_config_file(file)))
    if overrides:
        layers.append(("flags", {k: _format(v) for k, v in overrides.items() if v is not None}))
    for source, layer in layers:
        for key, value in layer.items():
            InputValidator.validate_config_key(key, known)
            merged[key] = value
        logger.debug("config.layer", extra={"context": {"source": source, "keys": sorted(layer)}})

    try:
        return RunConfig.model_validate(unflatten(merged))
    except PydanticValidationError as exc:
        errors = [
            {"key": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors(include_url=False)
        ]
        raise ConfigError(
            "Configuration is invalid",
            hint="Fix the listed keys in the config file or flags.",
            context={"errors": errors},
        ) from exc


def write_resolved_config(cfg: RunConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    flat = flatten(cfg.model_dump())
    path.write_text("".join(f"{key}={flat[key]}\n" for key in sorted(flat)), encoding="utf-8")
    return path
