"""Recency-ordered queue of frozen policies with truncated-geometric sampling."""

from __future__ import annotations

import threading
from typing import List

import numpy as np

from .core import AugPolicyError, logger
from .policy import PolicySnapshot
from .validators import InputValidator


def sampling_distribution(base_prob: float, n: int) -> np.ndarray:
    """``p_i = p (1-p)^(i-1) / (1 - (1-p)^n)`` for ``i = 1..n``."""

    p = InputValidator.validate_probability(base_prob, "base_prob")
    InputValidator.validate_integer(n, "n", min_value=1)
    q = 1.0 - p
    weights = p * q ** np.arange(n)
    return weights / (1.0 - q ** n)


class PolicyQueue:
    """The most recent policies, newest first."""

    def __init__(self, capacity: int = 5, base_prob: float = 0.5) -> None:
        self.capacity = InputValidator.validate_integer(capacity, "capacity", min_value=1)
        self.base_prob = InputValidator.validate_probability(base_prob, "base_prob")
        self._snapshots: List[PolicySnapshot] = []
        self._lock = threading.RLock()

    def __len__(self) -> int:
        return len(self._snapshots)

    @property
    def snapshots(self) -> List[PolicySnapshot]:
        with self._lock:
            return list(self._snapshots)

    def push(self, snap: PolicySnapshot) -> None:
        with self._lock:
            self._snapshots.insert(0, snap)
            evicted = self._snapshots[self.capacity:]
            del self._snapshots[self.capacity:]
        logger.info(
            "queue.push",
            extra={"context": {
                "policy_id": snap.policy_id,
                "length": len(self._snapshots),
                "evicted": [s.policy_id for s in evicted],
            }},
        )

    def sampling_distribution(self) -> np.ndarray:
        with self._lock:
            n = len(self._snapshots)
        if n == 0:
            raise AugPolicyError("Policy queue is empty", hint="Push a snapshot before sampling.")
        return sampling_distribution(self.base_prob, n)

    def sample(self, rng: np.random.Generator) -> PolicySnapshot:
        with self._lock:
            probs = self.sampling_distribution()
            index = int(rng.choice(len(self._snapshots), p=probs))
            return self._snapshots[index]
