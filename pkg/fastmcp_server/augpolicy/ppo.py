"""One-step-episode PPO over subpolicy pairs.

Each episode is a single action (a whole pair). There is no critic: the
advantage is the reward normalized across the epoch's collected pool.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Protocol, Sequence, Union

import numpy as np

from .augment import SubpolicyPair
from .contrastive import (
    Encoder,
    RandomPolicySource,
    build_views,
    encode,
    info_nce_per_pair,
    info_nce_value,
)
from .core import NonFiniteError, logger
from .data import Dataset, batch_indices
from .metrics import track_phase
from .numeric import AdamState, Graph, adam_step, backward
from .policy import PolicyMode, PolicyNet, PolicySnapshot, restore
from .reward import EpochLossTracker, bounded_reward, bounded_rewards
from .schemas import AugmentConfig, MetricsRecord, PolicyConfig, PpoConfig, RewardConfig
from .validators import ValidationError


@dataclass
class Trajectory:
    pair: SubpolicyPair
    ops: np.ndarray
    bins: np.ndarray
    old_log_prob: float
    reward: float
    entropy: float
    advantage: float = 0.0


class RewardSource(Protocol):
    """Scores one collection batch: one reward per pair."""

    def score(self, images: np.ndarray, pairs: Sequence[SubpolicyPair], rng: np.random.Generator) -> np.ndarray:
        ...


class BoundedInfoNCEReward:
    """Bounded InfoNCE of the views a batch of pairs produces under a frozen encoder.

    By default the whole batch shares one reward computed from the batch loss.
    ``per_sample`` scores every pair from its own share of the loss instead.
    """

    def __init__(
        self,
        encoder: Encoder,
        tracker: EpochLossTracker,
        reward_cfg: Optional[RewardConfig] = None,
        temperature: float = 0.5,
        augment_cfg: Optional[AugmentConfig] = None,
    ) -> None:
        self.encoder = encoder
        self.tracker = tracker
        self.cfg = reward_cfg or RewardConfig()
        self.temperature = temperature
        self.augment = augment_cfg or AugmentConfig()

    def score(self, images: np.ndarray, pairs: Sequence[SubpolicyPair], rng: np.random.Generator) -> np.ndarray:
        avg = self.tracker.require_average()
        v1, v2 = build_views(images, pairs, rng, signed=self.augment.signed_magnitudes, workers=self.augment.workers)
        z = encode(self.encoder, np.concatenate([v1, v2]))
        n = len(pairs)
        if self.cfg.per_sample:
            losses = info_nce_per_pair(z[:n], z[n:], self.temperature)
            _check_finite(losses, "per-pair InfoNCE")
            return bounded_rewards(losses, avg, self.cfg)
        loss = info_nce_value(z[:n], z[n:], self.temperature)
        _check_finite(np.array([loss]), "batch InfoNCE")
        return np.full(n, bounded_reward(loss, avg, self.cfg))


def _check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{what} is not finite during reward collection")


def prime_tracker(
    encoder: Encoder,
    dataset: Dataset,
    tracker: EpochLossTracker,
    rng: np.random.Generator,
    *,
    batch_size: int = 64,
    temperature: float = 0.5,
    n_tau: int = 2,
    augment_cfg: Optional[AugmentConfig] = None,
) -> float:
    """Fill ``tracker`` with one pass of random-subpolicy losses, without training.

    Used when searching against a loaded encoder that has no live loss history.
    """

    augment = augment_cfg or AugmentConfig()
    source = RandomPolicySource(n_tau)
    for idx in batch_indices(len(dataset), min(batch_size, len(dataset)), rng):
        pairs = source.pairs(len(idx), rng)
        v1, v2 = build_views(dataset.images[idx], pairs, rng, signed=augment.signed_magnitudes, workers=augment.workers)
        z = encode(encoder, np.concatenate([v1, v2]))
        tracker.record(info_nce_value(z[: len(idx)], z[len(idx):], temperature))
    return tracker.rollover()


def collect(
    policy: Union[PolicyNet, PolicySnapshot],
    dataset: Dataset,
    reward_source: RewardSource,
    cfg: PpoConfig,
    rng: np.random.Generator,
) -> List[Trajectory]:
    """Sample ``samples_per_epoch`` pairs in batches of ``collection_batch`` and score each batch."""

    if not len(dataset):
        raise ValidationError("Cannot collect trajectories from an empty dataset")
    bs = cfg.collection_batch
    trajectories: List[Trajectory] = []
    for _ in range(cfg.samples_per_epoch // bs):
        idx = rng.choice(len(dataset), size=bs, replace=len(dataset) < bs)
        sample = policy.sample_pairs(bs, rng)
        rewards = np.asarray(reward_source.score(dataset.images[idx], sample.pairs, rng), dtype=np.float64)
        if rewards.shape != (bs,):
            raise ValidationError(
                "Reward source must return one reward per pair",
                context={"expected": bs, "got": list(rewards.shape)},
            )
        for i in range(bs):
            trajectories.append(
                Trajectory(
                    pair=sample.pairs[i],
                    ops=sample.ops[i],
                    bins=sample.bins[i],
                    old_log_prob=float(sample.log_probs[i]),
                    reward=float(rewards[i]),
                    entropy=float(sample.entropies[i]),
                )
            )
    return trajectories


def normalize_advantages(trajs: Sequence[Trajectory]) -> List[Trajectory]:
    """Advantage = (reward - mean) / (population std + 1e-8); all zero when rewards are equal."""

    if len(trajs) < 2:
        raise ValidationError("Advantage normalization needs at least two trajectories", context={"count": len(trajs)})
    rewards = np.array([t.reward for t in trajs])
    if np.all(rewards == rewards[0]):
        advantages = np.zeros_like(rewards)
    else:
        advantages = (rewards - rewards.mean()) / (rewards.std() + 1e-8)
    return [replace(t, advantage=float(a)) for t, a in zip(trajs, advantages)]


def clipped_surrogate(ratio: np.ndarray, advantage: np.ndarray, clip: float) -> np.ndarray:
    ratio = np.asarray(ratio, dtype=np.float64)
    advantage = np.asarray(advantage, dtype=np.float64)
    return np.minimum(ratio * advantage, np.clip(ratio, 1.0 - clip, 1.0 + clip) * advantage)


@dataclass
class UpdateReport:
    losses: List[float] = field(default_factory=list)
    surrogates: List[float] = field(default_factory=list)
    entropies: List[float] = field(default_factory=list)
    clip_fractions: List[float] = field(default_factory=list)
    first_ratios: Optional[np.ndarray] = None

    @property
    def surrogate_loss(self) -> float:
        return float(np.mean(self.surrogates)) if self.surrogates else 0.0

    @property
    def clip_fraction(self) -> float:
        return float(np.mean(self.clip_fractions)) if self.clip_fractions else 0.0


def update(
    policy: PolicyNet,
    trajs: Sequence[Trajectory],
    cfg: PpoConfig,
    adam: AdamState,
    rng: np.random.Generator,
) -> UpdateReport:
    """``updates_per_epoch`` Adam steps on disjoint minibatches from one shuffle of the pool."""

    needed = cfg.updates_per_epoch * cfg.update_batch
    if len(trajs) < needed:
        raise ValidationError(
            f"Need {needed} trajectories for {cfg.updates_per_epoch} updates of {cfg.update_batch}",
            context={"available": len(trajs)},
        )
    order = rng.permutation(len(trajs))[:needed]
    report = UpdateReport()
    for u in range(cfg.updates_per_epoch):
        chosen = [trajs[i] for i in order[u * cfg.update_batch:(u + 1) * cfg.update_batch]]
        ops = np.stack([t.ops for t in chosen])
        bins = np.stack([t.bins for t in chosen])
        old = np.array([t.old_log_prob for t in chosen])
        adv = np.array([t.advantage for t in chosen])

        g = Graph()
        log_prob, entropy = policy.log_probs(g, ops, bins)
        ratio = g.exp(g.sub(log_prob, old))
        clipped = g.clip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip)
        surrogate = g.minimum(g.mul(ratio, adv), g.mul(clipped, adv))
        mean_entropy = g.mean(entropy)
        loss = g.sub(g.neg(g.mean(surrogate)), g.mul(mean_entropy, cfg.entropy_coef))

        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteError(
                "PPO loss is not finite",
                hint="Lower ppo.lr or check the reward source for NaNs.",
                context={"update": u, "max_abs_advantage": float(np.max(np.abs(adv)))},
            )
        backward(g, loss, policy.params.values())
        adam_step(adam, policy.params)

        if report.first_ratios is None:
            report.first_ratios = ratio.data.copy()
        report.losses.append(value)
        report.surrogates.append(-float(surrogate.data.mean()))
        report.entropies.append(mean_entropy.item())
        report.clip_fractions.append(float(np.mean(np.abs(ratio.data - 1.0) > cfg.clip)))
    return report


@dataclass
class PpoEpochStats:
    ppo_epoch: int
    mean_reward: float
    mean_entropy: float
    surrogate_loss: float
    clip_fraction: float

    def to_record(self, epoch: int) -> MetricsRecord:
        return MetricsRecord(
            epoch=epoch,
            phase="search",
            ppo_epoch=self.ppo_epoch,
            mean_reward=self.mean_reward,
            mean_entropy=self.mean_entropy,
            surrogate_loss=self.surrogate_loss,
            clip_fraction=self.clip_fraction,
        )


@track_phase("policy_search")
def search_policy(
    dataset: Dataset,
    reward_source: RewardSource,
    mode: Union[PolicyMode, str],
    cfg: PpoConfig,
    policy_cfg: Optional[PolicyConfig] = None,
    rng: Optional[np.random.Generator] = None,
    *,
    n_tau: int = 2,
    epoch: int = 0,
    init_from: Optional[PolicySnapshot] = None,
    on_epoch: Optional[Callable[[PpoEpochStats], None]] = None,
) -> PolicySnapshot:
    """Train a policy for ``ppo_epochs`` rounds of collect, normalize and update.

    The network starts fresh unless ``cfg.warm_start`` is set and ``init_from`` is given.
    """

    policy_cfg = policy_cfg or PolicyConfig()
    rng = rng if rng is not None else np.random.default_rng(0)
    net = PolicyNet.from_config(mode, n_tau, policy_cfg, rng)
    if cfg.warm_start and init_from is not None:
        net.load_state(restore(init_from, net.mode).state())
    adam = AdamState.create(net.params, lr=cfg.lr)

    logger.info(
        "ppo.search_start",
        extra={"context": {"mode": net.mode.value, "epoch": epoch, "ppo_epochs": cfg.ppo_epochs,
                           "warm_start": bool(cfg.warm_start and init_from is not None)}},
    )
    stats: Optional[PpoEpochStats] = None
    for ppo_epoch in range(1, cfg.ppo_epochs + 1):
        trajs = normalize_advantages(collect(net, dataset, reward_source, cfg, rng))
        report = update(net, trajs, cfg, adam, rng)
        stats = PpoEpochStats(
            ppo_epoch=ppo_epoch,
            mean_reward=float(np.mean([t.reward for t in trajs])),
            mean_entropy=float(np.mean([t.entropy for t in trajs])),
            surrogate_loss=report.surrogate_loss,
            clip_fraction=report.clip_fraction,
        )
        if on_epoch is not None:
            on_epoch(stats)
        logger.debug("ppo.epoch", extra={"context": {"epoch": epoch, **stats.__dict__}})

    logger.info(
        "ppo.search_done",
        extra={"context": {"epoch": epoch, "mean_reward": stats.mean_reward, "mean_entropy": stats.mean_entropy}},
    )
    return net.snapshot(epoch)
