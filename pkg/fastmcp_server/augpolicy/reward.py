"""Bounded InfoNCE reward and the last-epoch loss normalizer."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .core import NotPrimedError, logger
from .schemas import RewardConfig


def bounded_reward(loss: float, avg: float, cfg: RewardConfig) -> float:
    """Reward of one InfoNCE value normalized by the last-epoch average.

    Below the threshold the normalized loss is the reward; above it the
    reward falls linearly with slope ``-th/b`` and crosses zero at ``th + b``.
    """

    if not avg > 0:
        raise NotPrimedError(
            f"Normalizing average must be positive, got {avg}",
            hint="Complete at least one contrastive epoch before searching for a policy.",
        )
    normalized = loss / avg
    if normalized < cfg.th:
        return float(normalized)
    return float(-(cfg.th / cfg.b) * (normalized - (cfg.th + cfg.b)))


def bounded_rewards(losses: np.ndarray, avg: float, cfg: RewardConfig) -> np.ndarray:
    """Vectorized :func:`bounded_reward`."""

    if not avg > 0:
        raise NotPrimedError(f"Normalizing average must be positive, got {avg}")
    normalized = np.asarray(losses, dtype=np.float64) / avg
    return np.where(normalized < cfg.th, normalized, -(cfg.th / cfg.b) * (normalized - (cfg.th + cfg.b)))


def reward_curve(th: float, b_values: Sequence[float], grid: Iterable[float]) -> List[dict]:
    """Rows ``{normalized_loss, b, reward}`` for plotting tolerance variants."""

    rows = []
    points = [float(x) for x in grid]
    for b in b_values:
        cfg = RewardConfig(th=th, b=b)
        for x in points:
            rows.append({"normalized_loss": x, "th": th, "b": float(b), "reward": bounded_reward(x, 1.0, cfg)})
    return rows


@dataclass
class EpochLossTracker:
    """Accumulates per-batch losses; ``rollover`` freezes their mean."""

    total: float = 0.0
    count: int = 0
    frozen_average: Optional[float] = None
    epochs: int = 0

    def record(self, batch_loss: float) -> None:
        self.total += float(batch_loss)
        self.count += 1

    def rollover(self) -> float:
        if self.count == 0:
            raise NotPrimedError(
                "Cannot roll the loss tracker over without recorded batches",
                hint="Record at least one batch loss during the epoch.",
            )
        self.frozen_average = self.total / self.count
        self.total, self.count = 0.0, 0
        self.epochs += 1
        logger.debug("reward.tracker_rollover", extra={"context": {"average": self.frozen_average, "epochs": self.epochs}})
        return self.frozen_average

    @property
    def primed(self) -> bool:
        return self.frozen_average is not None and self.frozen_average > 0

    def require_average(self) -> float:
        if not self.primed:
            raise NotPrimedError(
                "Loss tracker is not primed",
                hint="Policy search needs a completed contrastive epoch first.",
            )
        return float(self.frozen_average)


def tracker_update(tracker: EpochLossTracker, batch_loss: float) -> None:
    tracker.record(batch_loss)


def tracker_rollover(tracker: EpochLossTracker) -> float:
    return tracker.rollover()
