"""Tests for trajectory collection, advantages and the clipped PPO update."""
from __future__ import annotations

from typing import List, Sequence

import numpy as np
import pytest

from fastmcp_server.augpolicy.augment import OpKind, SubpolicyPair
from fastmcp_server.augpolicy.contrastive import Encoder
from fastmcp_server.augpolicy.core import NonFiniteError, NotPrimedError
from fastmcp_server.augpolicy.data import synth_shapes
from fastmcp_server.augpolicy.numeric import AdamState
from fastmcp_server.augpolicy.policy import PolicyNet
from fastmcp_server.augpolicy.ppo import (
    BoundedInfoNCEReward,
    PpoEpochStats,
    Trajectory,
    clipped_surrogate,
    collect,
    normalize_advantages,
    prime_tracker,
    search_policy,
    update,
)
from fastmcp_server.augpolicy.reward import EpochLossTracker
from fastmcp_server.augpolicy.schemas import EncoderConfig, PolicyConfig, PpoConfig, RewardConfig
from fastmcp_server.augpolicy.validators import ValidationError

SMALL_POLICY = PolicyConfig(hidden=16, embed=8)
ROTATE = OpKind.ROTATE.index


def small_cfg(**overrides) -> PpoConfig:
    values = dict(
        ppo_epochs=2,
        samples_per_epoch=32,
        collection_batch=16,
        updates_per_epoch=2,
        update_batch=8,
        lr=5e-3,
    )
    values.update(overrides)
    return PpoConfig(**values)


class ConstantReward:
    def __init__(self, value: float = 1.0) -> None:
        self.value = value
        self.calls = 0

    def score(self, images: np.ndarray, pairs: Sequence[SubpolicyPair], rng: np.random.Generator) -> np.ndarray:
        self.calls += 1
        return np.full(len(pairs), self.value)


class FirstOpBandit:
    """Reward 1 when view 1 starts with the target operation, else 0."""

    def __init__(self, target: int = ROTATE) -> None:
        self.target = target

    def score(self, images: np.ndarray, pairs: Sequence[SubpolicyPair], rng: np.random.Generator) -> np.ndarray:
        return np.array([float(p.view1.steps[0].op.index == self.target) for p in pairs])


class CountingReward:
    def score(self, images: np.ndarray, pairs: Sequence[SubpolicyPair], rng: np.random.Generator) -> np.ndarray:
        return np.arange(len(pairs), dtype=np.float64)


def trajectories(rewards: List[float]) -> List[Trajectory]:
    net = PolicyNet("coviews", 1, hidden=2, embed=2)
    sample = net.sample_pairs(len(rewards), np.random.default_rng(0))
    return [
        Trajectory(sample.pairs[i], sample.ops[i], sample.bins[i], float(sample.log_probs[i]), r, 1.0)
        for i, r in enumerate(rewards)
    ]


@pytest.fixture
def tiny_data():
    return synth_shapes(16, classes=2, seed=0, size=8)


class TestAdvantages:
    """Reward normalization across the pool."""

    def test_standardized(self) -> None:
        adv = [t.advantage for t in normalize_advantages(trajectories([1.0, 2.0, 3.0]))]
        assert adv == pytest.approx([-1.2247, 0.0, 1.2247], abs=1e-4)

    def test_two_values(self) -> None:
        adv = [t.advantage for t in normalize_advantages(trajectories([0.0, 1.0]))]
        assert adv == pytest.approx([-1.0, 1.0], abs=1e-6)

    def test_equal_rewards_give_zero(self) -> None:
        adv = [t.advantage for t in normalize_advantages(trajectories([0.7] * 4))]
        assert adv == [0.0] * 4

    def test_input_not_mutated(self) -> None:
        trajs = trajectories([0.0, 1.0])
        normalize_advantages(trajs)
        assert [t.advantage for t in trajs] == [0.0, 0.0]

    def test_needs_two(self) -> None:
        with pytest.raises(ValidationError):
            normalize_advantages(trajectories([1.0]))


class TestSurrogate:
    """Clipped objective arithmetic."""

    def test_positive_advantage_clips_high(self) -> None:
        assert clipped_surrogate(np.array([2.0]), np.array([1.0]), 0.2)[0] == pytest.approx(1.2)

    def test_negative_advantage_clips_low(self) -> None:
        assert clipped_surrogate(np.array([0.5]), np.array([-1.0]), 0.2)[0] == pytest.approx(-0.8)

    def test_inside_band_unclipped(self) -> None:
        out = clipped_surrogate(np.array([1.1, 0.9]), np.array([2.0, -2.0]), 0.2)
        np.testing.assert_allclose(out, [2.2, -1.8])


class TestCollect:
    """Trajectory collection against stub reward sources."""

    def test_structure(self, tiny_data, rng: np.random.Generator) -> None:
        net = PolicyNet.from_config("coviews", 2, SMALL_POLICY, rng)
        trajs = collect(net, tiny_data, CountingReward(), small_cfg(), rng)
        assert len(trajs) == 32
        assert [t.reward for t in trajs[:16]] == list(range(16))
        assert all(t.ops.shape == (4,) and t.bins.shape == (4,) for t in trajs)
        for t in trajs[:3]:
            assert t.old_log_prob == pytest.approx(net.log_prob_of(t.pair)[0], rel=1e-10)

    def test_reward_shape_checked(self, tiny_data, rng: np.random.Generator) -> None:
        class Short:
            def score(self, images, pairs, rng):
                return np.zeros(len(pairs) - 1)

        net = PolicyNet.from_config("coviews", 2, SMALL_POLICY, rng)
        with pytest.raises(ValidationError):
            collect(net, tiny_data, Short(), small_cfg(), rng)

    def test_small_dataset_samples_with_replacement(self, rng: np.random.Generator) -> None:
        data = synth_shapes(4, classes=2, seed=0, size=8)
        net = PolicyNet.from_config("indepviews", 2, SMALL_POLICY, rng)
        assert len(collect(net, data, ConstantReward(), small_cfg(), rng)) == 32


class TestUpdate:
    """The clipped-surrogate Adam step."""

    def test_first_ratio_is_one(self, tiny_data, rng: np.random.Generator) -> None:
        net = PolicyNet.from_config("coviews", 2, SMALL_POLICY, rng)
        cfg = small_cfg()
        trajs = normalize_advantages(collect(net, tiny_data, CountingReward(), cfg, rng))
        report = update(net, trajs, cfg, AdamState.create(net.params, lr=cfg.lr), rng)
        np.testing.assert_allclose(report.first_ratios, 1.0, atol=1e-10)
        assert len(report.losses) == 2
        assert report.clip_fractions[0] == 0.0

    def test_update_changes_parameters(self, tiny_data, rng: np.random.Generator) -> None:
        net = PolicyNet.from_config("coviews", 2, SMALL_POLICY, rng)
        before = net.state()
        cfg = small_cfg()
        trajs = normalize_advantages(collect(net, tiny_data, CountingReward(), cfg, rng))
        update(net, trajs, cfg, AdamState.create(net.params, lr=cfg.lr), rng)
        assert any(not np.array_equal(before[k], v) for k, v in net.state().items())

    def test_too_few_trajectories(self, rng: np.random.Generator) -> None:
        net = PolicyNet("coviews", 1, hidden=2, embed=2)
        cfg = small_cfg()
        with pytest.raises(ValidationError):
            update(net, normalize_advantages(trajectories([0.0, 1.0])), cfg, AdamState.create(net.params), rng)

    def test_nan_reward_raises(self, tiny_data, rng: np.random.Generator) -> None:
        net = PolicyNet.from_config("coviews", 2, SMALL_POLICY, rng)
        cfg = small_cfg()
        trajs = normalize_advantages(collect(net, tiny_data, ConstantReward(float("nan")), cfg, rng))
        with pytest.raises(NonFiniteError):
            update(net, trajs, cfg, AdamState.create(net.params, lr=cfg.lr), rng)


def test_batching_constraint() -> None:
    with pytest.raises(ValueError):
        PpoConfig(samples_per_epoch=32, updates_per_epoch=4, update_batch=16, collection_batch=16)
    with pytest.raises(ValueError):
        PpoConfig(samples_per_epoch=30, collection_batch=16, updates_per_epoch=1, update_batch=8)


class TestSearchPolicy:
    """End-to-end policy search on stub and real rewards."""

    def test_learns_first_op_bandit(self) -> None:
        """Full default schedule at lr 1e-2: the first view-1 op locks onto Rotate on 4 of 5 seeds."""
        data = synth_shapes(64, seed=0, size=8)
        cfg = PpoConfig(lr=1e-2)
        hits = 0
        for seed in range(5):
            snap = search_policy(data, FirstOpBandit(), "coviews", cfg, PolicyConfig(), np.random.default_rng(seed))
            ops = snap.sample_pairs(1000, np.random.default_rng(100 + seed)).ops
            hits += np.mean(ops[:, 0] == ROTATE) > 0.8
        assert hits >= 4

    def test_default_schedule_values(self) -> None:
        cfg = PpoConfig()
        assert (cfg.ppo_epochs, cfg.samples_per_epoch, cfg.updates_per_epoch, cfg.update_batch) == (100, 128, 4, 16)
        assert (cfg.entropy_coef, cfg.clip) == (0.05, 0.2)

    def test_constant_reward_keeps_entropy(self, tiny_data) -> None:
        cfg = small_cfg(ppo_epochs=5)
        recorded: List[PpoEpochStats] = []
        search_policy(tiny_data, ConstantReward(), "indepviews", cfg, SMALL_POLICY, np.random.default_rng(0),
                      on_epoch=recorded.append)
        assert [s.ppo_epoch for s in recorded] == [1, 2, 3, 4, 5]
        first, last = recorded[0].mean_entropy, recorded[-1].mean_entropy
        assert abs(last - first) / first < 0.05
        assert all(s.mean_reward == 1.0 for s in recorded)

    def test_snapshot_metadata(self, tiny_data) -> None:
        snap = search_policy(tiny_data, ConstantReward(), "coviews", small_cfg(ppo_epochs=1), SMALL_POLICY,
                             np.random.default_rng(0), n_tau=3, epoch=12)
        assert snap.policy_id == "coviews-e0012"
        assert snap.n_tau == 3

    def test_warm_start(self, tiny_data) -> None:
        start = PolicyNet.from_config("coviews", 2, SMALL_POLICY, np.random.default_rng(99)).snapshot(4)
        cfg = small_cfg(ppo_epochs=1, lr=1e-12, warm_start=True)
        warm = search_policy(tiny_data, CountingReward(), "coviews", cfg, SMALL_POLICY, np.random.default_rng(0),
                             init_from=start)
        for name, array in start.params.items():
            np.testing.assert_allclose(warm.params[name], array, atol=1e-9)
        cold = search_policy(tiny_data, CountingReward(), "coviews", small_cfg(ppo_epochs=1, lr=1e-12), SMALL_POLICY,
                             np.random.default_rng(0), init_from=start)
        assert not np.allclose(cold.params["w_x"], start.params["w_x"])

    def test_record_conversion(self) -> None:
        record = PpoEpochStats(3, 0.9, 20.1, -0.01, 0.05).to_record(25)
        assert record.phase == "search"
        assert (record.epoch, record.ppo_epoch) == (25, 3)


class TestBoundedInfoNCEReward:
    """Reward from a frozen encoder."""

    @pytest.fixture
    def encoder(self) -> Encoder:
        enc = Encoder(EncoderConfig(channels=(2, 2), proj_hidden=8, proj_dim=4), 8, np.random.default_rng(0))
        enc.params["proj2_b"].data = np.full(4, 0.3)
        return enc

    def test_needs_primed_tracker(self, encoder, tiny_data, rng) -> None:
        source = BoundedInfoNCEReward(encoder, EpochLossTracker())
        pairs = PolicyNet("coviews", 2).sample_pairs(4, rng).pairs
        with pytest.raises(NotPrimedError):
            source.score(tiny_data.images[:4], pairs, rng)

    def test_batch_and_per_sample_modes(self, encoder, tiny_data, rng) -> None:
        tracker = EpochLossTracker()
        average = prime_tracker(encoder, tiny_data, tracker, rng, batch_size=8)
        assert average > 0 and tracker.primed
        pairs = PolicyNet("coviews", 2).sample_pairs(8, rng).pairs
        shared = BoundedInfoNCEReward(encoder, tracker).score(tiny_data.images[:8], pairs, rng)
        assert shared.shape == (8,)
        assert np.all(shared == shared[0])
        per_pair = BoundedInfoNCEReward(encoder, tracker, RewardConfig(per_sample=True)).score(
            tiny_data.images[:8], pairs, rng
        )
        assert per_pair.shape == (8,)
        assert np.all(np.isfinite(per_pair))
        assert np.unique(per_pair).size > 1

    def test_search_leaves_encoder_untouched(self, encoder, tiny_data, rng) -> None:
        tracker = EpochLossTracker()
        prime_tracker(encoder, tiny_data, tracker, rng, batch_size=8)
        before = encoder.checksum()
        search_policy(tiny_data, BoundedInfoNCEReward(encoder, tracker), "coviews",
                      small_cfg(ppo_epochs=1, samples_per_epoch=16, collection_batch=8, update_batch=4),
                      SMALL_POLICY, rng)
        assert encoder.checksum() == before
