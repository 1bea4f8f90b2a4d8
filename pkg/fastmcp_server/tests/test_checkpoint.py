"""Tests for the binary parameter container."""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from fastmcp_server.augpolicy.checkpoint import MAGIC, VERSION, load_arrays, save_arrays
from fastmcp_server.augpolicy.core import CheckpointError


@pytest.fixture
def saved(tmp_path: Path) -> Path:
    arrays = {"w": np.arange(6.0).reshape(2, 3), "b": np.array([0.5, -0.25]), "scalar": np.array(3.0)}
    return save_arrays(tmp_path / "params.ckpt", arrays, {"kind": "test", "epoch": 7})


def test_save_and_load(saved: Path) -> None:
    arrays, meta = load_arrays(saved)
    assert meta == {"kind": "test", "epoch": 7}
    np.testing.assert_array_equal(arrays["w"], np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(arrays["b"], [0.5, -0.25])
    assert arrays["scalar"].shape == ()
    assert arrays["w"].flags.writeable


def test_starts_with_magic_and_version(saved: Path) -> None:
    blob = saved.read_bytes()
    assert blob[:8] == MAGIC
    assert struct.unpack_from("<I", blob, 8)[0] == VERSION


def test_missing_file(tmp_path: Path) -> None:
    with pytest.raises(CheckpointError) as exc:
        load_arrays(tmp_path / "nope.ckpt")
    assert "not found" in str(exc.value)


def test_wrong_magic(saved: Path) -> None:
    blob = bytearray(saved.read_bytes())
    blob[:8] = b"NOTACKPT"
    saved.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_arrays(saved)


def test_future_version(saved: Path) -> None:
    blob = bytearray(saved.read_bytes())
    struct.pack_into("<I", blob, 8, VERSION + 1)
    saved.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError) as exc:
        load_arrays(saved)
    assert "version" in str(exc.value)


@pytest.mark.parametrize("keep", [4, 20, -8])
def test_truncated(saved: Path, keep: int) -> None:
    saved.write_bytes(saved.read_bytes()[:keep])
    with pytest.raises(CheckpointError):
        load_arrays(saved)


def test_trailing_bytes(saved: Path) -> None:
    saved.write_bytes(saved.read_bytes() + b"\x00" * 8)
    with pytest.raises(CheckpointError):
        load_arrays(saved)


def test_corrupt_header(saved: Path) -> None:
    blob = bytearray(saved.read_bytes())
    blob[16] = 0xFF
    saved.write_bytes(bytes(blob))
    with pytest.raises(CheckpointError):
        load_arrays(saved)
