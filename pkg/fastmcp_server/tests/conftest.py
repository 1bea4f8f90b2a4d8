"""Pytest configuration helpers for the augmentation-policy tests."""
from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[2]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from fastmcp_server.augpolicy.metrics import get_metrics_collector  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def image() -> np.ndarray:
    """A 32x32 RGB gradient without any pixel equal to 128."""
    ramp = np.arange(32, dtype=np.uint8)[None, :] * 3
    img = np.stack([ramp.repeat(32, axis=0), ramp.T.repeat(32, axis=1), np.full((32, 32), 7, np.uint8)], axis=-1)
    return img


@pytest.fixture(autouse=True)
def _reset_metrics():
    get_metrics_collector().reset()
    yield
