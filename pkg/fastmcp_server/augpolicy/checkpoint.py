"""Versioned binary container mapping parameter names to float64 arrays.

Layout::

    magic      8 bytes   b"AUGCKPT\\0"
    version    u32 LE
    header_len u32 LE
    header     JSON (utf-8): {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
    payload    float64 LE values of each tensor, in header order
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Any, Dict, Mapping, Tuple, Union

import numpy as np

from .core import CheckpointError, logger

MAGIC = b"AUGCKPT\x00"
VERSION = 1
_PREFIX = struct.Struct("<8sII")

PathLike = Union[str, Path]


def save_arrays(path: PathLike, arrays: Mapping[str, np.ndarray], meta: Mapping[str, Any] | None = None) -> Path:
    """Write ``arrays`` and JSON-serializable ``meta`` to ``path``."""

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = sorted(arrays)
    header = {
        "meta": dict(meta or {}),
        "tensors": [{"name": name, "shape": list(np.shape(arrays[name]))} for name in names],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with path.open("wb") as handle:
        handle.write(_PREFIX.pack(MAGIC, VERSION, len(header_bytes)))
        handle.write(header_bytes)
        for name in names:
            handle.write(np.ascontiguousarray(arrays[name], dtype="<f8").tobytes())
    logger.debug("checkpoint.saved", extra={"context": {"path": str(path), "tensors": len(names)}})
    return path


def load_arrays(path: PathLike) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    """Read a container written by :func:`save_arrays`."""

    path = Path(path)
    if not path.is_file():
        raise CheckpointError(
            f"Checkpoint not found: {path}",
            hint="Run 'augpolicy pretrain' first or point to an existing run directory.",
        )
    blob = path.read_bytes()
    if len(blob) < _PREFIX.size:
        raise CheckpointError(f"Checkpoint {path} is truncated", context={"bytes": len(blob)})
    magic, version, header_len = _PREFIX.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CheckpointError(f"{path} is not a parameter checkpoint", context={"magic": magic.hex()})
    if version != VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint version {version}",
            hint=f"This build reads version {VERSION}.",
            context={"path": str(path)},
        )
    offset = _PREFIX.size
    try:
        header = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"Checkpoint header of {path} is corrupt: {exc}") from exc
    offset += header_len

    tensors = header.get("tensors") if isinstance(header, dict) else None
    if not isinstance(tensors, list):
        raise CheckpointError(f"Checkpoint header of {path} lists no tensors")

    arrays: Dict[str, np.ndarray] = {}
    for entry in tensors:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 8 * count
        if end > len(blob):
            raise CheckpointError(
                f"Checkpoint {path} ends inside tensor {entry['name']!r}",
                context={"offset": offset, "needed": 8 * count, "available": len(blob) - offset},
            )
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(blob):
        raise CheckpointError(f"Checkpoint {path} has {len(blob) - offset} trailing bytes")
    return arrays, header.get("meta", {})
