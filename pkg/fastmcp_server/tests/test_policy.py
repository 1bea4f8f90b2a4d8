"""Tests for the LSTM policy network and its snapshots."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from fastmcp_server.augpolicy.augment import NUM_BINS, NUM_OPS, pair_from_indices
from fastmcp_server.augpolicy.core import CheckpointError
from fastmcp_server.augpolicy.numeric import Graph
from fastmcp_server.augpolicy.policy import (
    PolicyMode,
    PolicyNet,
    load_snapshot,
    log_prob_of,
    restore,
    sample_pair,
    save_snapshot,
    snapshot,
    view2_logits,
)
from fastmcp_server.augpolicy.schemas import PolicyConfig
from fastmcp_server.augpolicy.validators import ValidationError

UNIFORM_ENTROPY = 4 * (math.log(NUM_OPS) + math.log(NUM_BINS))


def make_net(mode: str = "coviews", scale: float = 0.5, seed: int = 0, n_tau: int = 2) -> PolicyNet:
    return PolicyNet(mode, n_tau, hidden=8, embed=4, head_init_scale=scale, rng=np.random.default_rng(seed))


class TestSampling:
    """Batched sampling and scoring of given actions."""

    def test_sample_shapes(self, rng: np.random.Generator) -> None:
        sample = make_net().sample_pairs(5, rng)
        assert len(sample.pairs) == 5
        assert sample.ops.shape == sample.bins.shape == (5, 4)
        assert sample.log_probs.shape == sample.entropies.shape == (5,)
        assert sample.ops.min() >= 0 and sample.ops.max() < NUM_OPS
        assert sample.bins.min() >= 0 and sample.bins.max() < NUM_BINS
        for pair in sample.pairs:
            assert pair.view1.n_tau == pair.view2.n_tau == 2
            assert all(step.apply_prob == 0.8 for step in pair.view1.steps + pair.view2.steps)

    def test_uniform_heads(self, rng: np.random.Generator) -> None:
        net = make_net(scale=0.0)
        sample = net.sample_pairs(3, rng)
        np.testing.assert_allclose(sample.entropies, UNIFORM_ENTROPY, rtol=1e-12)
        np.testing.assert_allclose(sample.log_probs, -UNIFORM_ENTROPY, rtol=1e-12)
        assert UNIFORM_ENTROPY == pytest.approx(20.682, abs=1e-3)

    def test_same_seed_same_pairs(self) -> None:
        net = make_net()
        a = net.sample_pairs(8, np.random.default_rng(5))
        b = net.sample_pairs(8, np.random.default_rng(5))
        np.testing.assert_array_equal(a.ops, b.ops)
        np.testing.assert_array_equal(a.bins, b.bins)

    def test_log_prob_of_matches_sampled(self, rng: np.random.Generator) -> None:
        net = make_net()
        sample = net.sample_pairs(4, rng)
        for i, pair in enumerate(sample.pairs):
            log_prob, entropy = log_prob_of(net, pair)
            assert log_prob == pytest.approx(sample.log_probs[i], rel=1e-10)
            assert entropy == pytest.approx(sample.entropies[i], rel=1e-10)
            assert log_prob < 0

    def test_log_probs_record_on_graph(self) -> None:
        net = make_net()
        g = Graph()
        log_prob, entropy = net.log_probs(g, np.array([[0, 1, 2, 3]]), np.array([[4, 5, 6, 7]]))
        assert log_prob.shape == entropy.shape == (1,)
        assert log_prob.requires_grad
        assert g.nodes

    def test_empirical_frequencies_match_probability(self) -> None:
        net = make_net(n_tau=1, scale=2.0, seed=3)
        first = net._rollout(Graph(record=False), 1, ops=np.zeros((1, 2), dtype=np.int64), bins=np.zeros((1, 2), dtype=np.int64))
        logits = first.op_logits[0].data[0]
        expected = np.exp(logits - logits.max())
        expected /= expected.sum()
        sample = net.sample_pairs(20_000, np.random.default_rng(9))
        counts = np.bincount(sample.ops[:, 0], minlength=NUM_OPS) / 20_000
        assert np.abs(counts - expected).max() < 0.02

    def test_sample_pair_wrapper(self, rng: np.random.Generator) -> None:
        pair, log_prob, entropy = sample_pair(make_net(), rng)
        assert pair.view1.n_tau == 2
        assert math.isfinite(log_prob) and entropy > 0

    def test_wrong_step_count_rejected(self) -> None:
        net = make_net()
        short = pair_from_indices([1, 2], [3, 4], 1)
        with pytest.raises(ValidationError):
            log_prob_of(net, short)

    def test_out_of_range_actions_rejected(self) -> None:
        net = make_net()
        with pytest.raises(ValidationError):
            net.log_probs(Graph(), np.array([[0, 1, 2, 16]]), np.array([[0, 0, 0, 0]]))
        with pytest.raises(ValidationError):
            net.log_probs(Graph(), np.array([[0, 1, 2, 3]]), np.array([[0, 0, 0, 11]]))

    def test_unknown_mode_rejected(self) -> None:
        with pytest.raises(ValueError):
            PolicyNet("random")

    def test_from_config(self, rng: np.random.Generator) -> None:
        net = PolicyNet.from_config("indepviews", 3, PolicyConfig(hidden=5, embed=3), rng)
        assert net.mode is PolicyMode.INDEPVIEWS
        assert net.params["w_h"].shape == (5, 20)
        assert net.params["start"].shape == (6,)
        assert net.sample_pairs(2, rng).ops.shape == (2, 6)


class TestViewCoupling:
    """CoViews conditions view 2 on view 1; IndepViews does not."""

    HISTORIES = ([(0, 0), (4, 10)], [(14, 3), (9, 9)], [(15, 5), (15, 5)])

    @pytest.mark.parametrize("seed", range(10))
    def test_indepviews_ignores_view1(self, seed: int) -> None:
        net = make_net("indepviews", scale=1.0, seed=seed)
        logits = [view2_logits(net, h) for h in self.HISTORIES]
        for other in logits[1:]:
            np.testing.assert_array_equal(other, logits[0])

    def test_indepviews_view2_matches_view1_start(self) -> None:
        net = make_net("indepviews", scale=1.0)
        g = Graph(record=False)
        roll = net._rollout(g, 1, ops=np.array([[3, 7]]), bins=np.array([[1, 2]]), steps=4, rng=np.random.default_rng(0))
        np.testing.assert_allclose(roll.op_logits[2].data, roll.op_logits[0].data)

    @pytest.mark.parametrize("seed", range(10))
    def test_coviews_depends_on_view1(self, seed: int) -> None:
        net = make_net("coviews", scale=1.0, seed=seed)
        logits = [view2_logits(net, h) for h in self.HISTORIES]
        assert np.max(np.abs(logits[0] - logits[1])) > 0
        assert np.max(np.abs(logits[1] - logits[2])) > 0

    def test_history_length_checked(self) -> None:
        with pytest.raises(ValidationError):
            view2_logits(make_net(), [(0, 0)])


class TestSnapshots:
    """Frozen copies, restore and persistence."""

    def test_snapshot_is_independent_of_later_updates(self) -> None:
        net = make_net()
        snap = snapshot(net, epoch=25)
        before = snap.sample_pairs(16, np.random.default_rng(1))
        for tensor in net.params.values():
            tensor.data += 3.0
        after = snap.sample_pairs(16, np.random.default_rng(1))
        np.testing.assert_array_equal(before.ops, after.ops)
        np.testing.assert_allclose(before.log_probs, after.log_probs)

    def test_snapshot_arrays_are_read_only(self) -> None:
        snap = make_net().snapshot(5)
        with pytest.raises(ValueError):
            snap.params["b"][0] = 1.0
        with pytest.raises(TypeError):
            snap.params["b"] = np.zeros(1)

    def test_policy_id(self) -> None:
        assert make_net("indepviews").snapshot(25).policy_id == "indepviews-e0025"

    def test_restore_samples_like_original(self) -> None:
        net = make_net(seed=8)
        copy = restore(net.snapshot(3))
        a = net.sample_pairs(10, np.random.default_rng(2))
        b = copy.sample_pairs(10, np.random.default_rng(2))
        np.testing.assert_array_equal(a.ops, b.ops)
        np.testing.assert_allclose(a.log_probs, b.log_probs)

    def test_restore_mode_mismatch(self) -> None:
        snap = make_net("coviews").snapshot(1)
        with pytest.raises(CheckpointError):
            restore(snap, mode="indepviews")

    def test_save_and_load(self, tmp_path: Path) -> None:
        snap = make_net("indepviews", seed=4).snapshot(30)
        path = save_snapshot(snap, tmp_path / "policy.ckpt")
        loaded = load_snapshot(path)
        assert loaded.policy_id == snap.policy_id
        assert (loaded.hidden, loaded.embed, loaded.n_tau) == (8, 4, 2)
        for name, array in snap.params.items():
            np.testing.assert_array_equal(loaded.params[name], array)

    def test_load_state_rejects_other_layout(self) -> None:
        small = make_net()
        big = PolicyNet("coviews", 2, hidden=9, embed=4)
        with pytest.raises(CheckpointError):
            small.load_state(big.state())
        with pytest.raises(CheckpointError):
            small.load_state({"start": np.zeros(8)})
