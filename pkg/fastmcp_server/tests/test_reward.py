"""Tests for the bounded reward and the epoch loss tracker."""
from __future__ import annotations

import numpy as np
import pytest

from fastmcp_server.augpolicy.core import NotPrimedError
from fastmcp_server.augpolicy.reward import (
    EpochLossTracker,
    bounded_reward,
    bounded_rewards,
    reward_curve,
    tracker_rollover,
    tracker_update,
)
from fastmcp_server.augpolicy.schemas import RewardConfig

CFG = RewardConfig(th=1.3, b=0.2)


@pytest.mark.parametrize(
    ("normalized", "expected"),
    [(0.9, 0.9), (1.4, 0.65), (1.5, 0.0), (1.7, -1.3), (0.0, 0.0)],
)
def test_bounded_reward_examples(normalized: float, expected: float) -> None:
    assert bounded_reward(normalized, 1.0, CFG) == pytest.approx(expected, abs=1e-12)


def test_reward_normalizes_by_average() -> None:
    assert bounded_reward(1.8, 2.0, CFG) == pytest.approx(0.9)
    assert bounded_reward(3.4, 2.0, CFG) == pytest.approx(0.0, abs=1e-12)


def test_threshold_is_the_peak() -> None:
    grid = np.linspace(0.0, 2.0, 2001)
    rewards = [bounded_reward(x, 1.0, CFG) for x in grid]
    best = grid[int(np.argmax(rewards))]
    assert best == pytest.approx(1.3, abs=1e-3)
    assert max(rewards) == pytest.approx(1.3, abs=1e-2)


def test_reward_is_continuous_at_threshold() -> None:
    below = bounded_reward(1.3 - 1e-9, 1.0, CFG)
    at = bounded_reward(1.3, 1.0, CFG)
    assert at == pytest.approx(below, abs=1e-6)


def test_large_tolerance_approaches_identity_past_threshold() -> None:
    loose = RewardConfig(th=1.3, b=1e5)
    assert bounded_reward(1.6, 1.0, loose) == pytest.approx(1.3, abs=1e-4)


def test_tiny_tolerance_is_a_cliff() -> None:
    sharp = RewardConfig(th=1.3, b=1e-5)
    assert bounded_reward(1.31, 1.0, sharp) < -1000


@pytest.mark.parametrize("avg", [0.0, -1.0, float("nan")])
def test_unprimed_average_rejected(avg: float) -> None:
    with pytest.raises(NotPrimedError):
        bounded_reward(1.0, avg, CFG)
    with pytest.raises(NotPrimedError):
        bounded_rewards(np.ones(2), avg, CFG)


def test_vectorized_matches_scalar() -> None:
    losses = np.array([0.5, 1.25, 2.6, 2.9, 3.5])
    expected = [bounded_reward(x, 2.0, CFG) for x in losses]
    np.testing.assert_allclose(bounded_rewards(losses, 2.0, CFG), expected)


def test_reward_curve_rows() -> None:
    rows = reward_curve(1.3, [1e-5, 0.2, 1e5], [0.5, 1.4])
    assert len(rows) == 6
    assert set(rows[0]) == {"normalized_loss", "th", "b", "reward"}
    middle = [r for r in rows if r["b"] == 0.2]
    assert [r["reward"] for r in middle] == pytest.approx([0.5, 0.65])


def test_invalid_reward_config() -> None:
    with pytest.raises(ValueError):
        RewardConfig(th=1.0)
    with pytest.raises(ValueError):
        RewardConfig(b=0.0)


class TestEpochLossTracker:
    """Running loss mean frozen at epoch boundaries."""

    def test_not_primed_before_first_rollover(self) -> None:
        tracker = EpochLossTracker()
        assert not tracker.primed
        with pytest.raises(NotPrimedError):
            tracker.require_average()

    def test_rollover_freezes_mean(self) -> None:
        tracker = EpochLossTracker()
        for loss in (4.0, 5.0, 6.0):
            tracker_update(tracker, loss)
        assert tracker_rollover(tracker) == pytest.approx(5.0)
        assert tracker.require_average() == pytest.approx(5.0)
        tracker.record(1.0)
        # mid-epoch batches do not move the frozen value
        assert tracker.require_average() == pytest.approx(5.0)
        assert tracker.rollover() == pytest.approx(1.0)
        assert tracker.epochs == 2

    def test_empty_epoch_rollover_rejected(self) -> None:
        with pytest.raises(NotPrimedError):
            EpochLossTracker().rollover()
