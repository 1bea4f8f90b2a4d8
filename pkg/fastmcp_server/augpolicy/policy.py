"""LSTM policy network emitting subpolicy pairs.

One LSTM step per transformation: the hidden state feeds an operation head
(16 logits) and a magnitude head (11 logits); the sampled pair is embedded
and becomes the next step's input. Under CoViews the recurrent state runs
straight through from view 1 into view 2. Under IndepViews it is reset to the
start state before the first view-2 step, so the two views are independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .augment import NUM_BINS, NUM_OPS, SubpolicyPair, pair_from_indices
from .checkpoint import load_arrays, save_arrays
from .core import CheckpointError, logger
from .numeric import Graph, Tensor, orthogonal, parameter, uniform
from .schemas import PolicyConfig
from .validators import InputValidator, ValidationError

SNAPSHOT_VERSION = 1

ActionHistory = Sequence[Tuple[int, int]]


class PolicyMode(str, Enum):
    COVIEWS = "coviews"
    INDEPVIEWS = "indepviews"


@dataclass
class PolicySample:
    """A batch of sampled pairs with their log-probabilities and entropies."""

    pairs: List[SubpolicyPair]
    ops: np.ndarray
    bins: np.ndarray
    log_probs: np.ndarray
    entropies: np.ndarray


@dataclass
class _Rollout:
    log_prob: Tensor
    entropy: Tensor
    ops: np.ndarray
    bins: np.ndarray
    op_logits: List[Tensor] = field(default_factory=list)


def _inverse_cdf(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0])[:, None]
    return np.minimum((u > cdf).sum(axis=1), probs.shape[1] - 1)


class PolicyNet:
    """One-layer LSTM with operation and magnitude heads."""

    def __init__(
        self,
        mode: Union[PolicyMode, str],
        n_tau: int = 2,
        *,
        hidden: int = 64,
        embed: int = 16,
        head_init_scale: float = 0.01,
        rng: Optional[np.random.Generator] = None,
    ) -> None:
        self.mode = PolicyMode(mode)
        self.n_tau = InputValidator.validate_integer(n_tau, "n_tau", min_value=1)
        self.hidden = InputValidator.validate_integer(hidden, "hidden", min_value=1)
        self.embed = InputValidator.validate_integer(embed, "embed", min_value=1)
        rng = rng or np.random.default_rng(0)
        h, e = hidden, embed
        w_h = np.concatenate([orthogonal(h, h, rng) for _ in range(4)], axis=1)
        bias = np.zeros(4 * h)
        bias[h:2 * h] = 1.0  # forget gate
        self.params: Dict[str, Tensor] = {
            "start": parameter(rng.normal(0.0, 0.5, size=2 * e), "start"),
            "op_embed": parameter(rng.normal(0.0, 0.5, size=(NUM_OPS, e)), "op_embed"),
            "mag_embed": parameter(rng.normal(0.0, 0.5, size=(NUM_BINS, e)), "mag_embed"),
            "w_x": parameter(uniform((2 * e, 4 * h), 1.0 / np.sqrt(2 * e), rng), "w_x"),
            "w_h": parameter(w_h, "w_h"),
            "b": parameter(bias, "b"),
            "op_w": parameter(uniform((h, NUM_OPS), head_init_scale, rng), "op_w"),
            "op_b": parameter(np.zeros(NUM_OPS), "op_b"),
            "mag_w": parameter(uniform((h, NUM_BINS), head_init_scale, rng), "mag_w"),
            "mag_b": parameter(np.zeros(NUM_BINS), "mag_b"),
        }

    @classmethod
    def from_config(
        cls,
        mode: Union[PolicyMode, str],
        n_tau: int,
        cfg: PolicyConfig,
        rng: np.random.Generator,
    ) -> "PolicyNet":
        return cls(mode, n_tau, hidden=cfg.hidden, embed=cfg.embed, head_init_scale=cfg.head_init_scale, rng=rng)

    # -- forward ---------------------------------------------------------

    def _step(self, g: Graph, x: Tensor, h: Tensor, c: Tensor) -> Tuple[Tensor, Tensor]:
        p, hs = self.params, self.hidden
        gates = g.add(g.add(g.matmul(x, p["w_x"]), g.matmul(h, p["w_h"])), p["b"])
        i = g.sigmoid(g.slice(gates, (slice(None), slice(0, hs))))
        f = g.sigmoid(g.slice(gates, (slice(None), slice(hs, 2 * hs))))
        u = g.tanh(g.slice(gates, (slice(None), slice(2 * hs, 3 * hs))))
        o = g.sigmoid(g.slice(gates, (slice(None), slice(3 * hs, 4 * hs))))
        c = g.add(g.mul(f, c), g.mul(i, u))
        h = g.mul(o, g.tanh(c))
        return h, c

    def _initial_state(self, g: Graph, batch: int) -> Tuple[Tensor, Tensor, Tensor]:
        x = g.add(np.zeros((batch, 2 * self.embed)), self.params["start"])
        zeros = np.zeros((batch, self.hidden))
        return x, Tensor(zeros), Tensor(zeros)

    def _rollout(
        self,
        g: Graph,
        batch: int,
        *,
        rng: Optional[np.random.Generator] = None,
        ops: Optional[np.ndarray] = None,
        bins: Optional[np.ndarray] = None,
        steps: Optional[int] = None,
    ) -> _Rollout:
        """Run the LSTM for ``steps`` steps, sampling actions or scoring given ones."""

        p = self.params
        total = 2 * self.n_tau if steps is None else steps
        forced = ops is not None
        out_ops = np.zeros((batch, total), dtype=np.int64)
        out_bins = np.zeros((batch, total), dtype=np.int64)
        x, h, c = self._initial_state(g, batch)
        log_prob: Optional[Tensor] = None
        entropy: Optional[Tensor] = None
        op_logits: List[Tensor] = []

        for t in range(total):
            if t == self.n_tau and self.mode is PolicyMode.INDEPVIEWS:
                x, h, c = self._initial_state(g, batch)
            h, c = self._step(g, x, h, c)
            op_l = g.add(g.matmul(h, p["op_w"]), p["op_b"])
            mag_l = g.add(g.matmul(h, p["mag_w"]), p["mag_b"])
            op_logits.append(op_l)
            op_lp = g.log_softmax(op_l, axis=1)
            mag_lp = g.log_softmax(mag_l, axis=1)
            if forced and t < ops.shape[1]:
                a_op, a_mag = ops[:, t], bins[:, t]
            else:
                a_op = _inverse_cdf(np.exp(op_lp.data), rng)
                a_mag = _inverse_cdf(np.exp(mag_lp.data), rng)
            out_ops[:, t], out_bins[:, t] = a_op, a_mag

            step_lp = g.add(g.gather(op_lp, a_op), g.gather(mag_lp, a_mag))
            step_ent = g.neg(
                g.add(
                    g.sum(g.mul(g.exp(op_lp), op_lp), axis=1),
                    g.sum(g.mul(g.exp(mag_lp), mag_lp), axis=1),
                )
            )
            log_prob = step_lp if log_prob is None else g.add(log_prob, step_lp)
            entropy = step_ent if entropy is None else g.add(entropy, step_ent)
            x = g.concat([g.slice(p["op_embed"], a_op), g.slice(p["mag_embed"], a_mag)], axis=1)

        return _Rollout(log_prob, entropy, out_ops, out_bins, op_logits)

    # -- public operations ------------------------------------------------

    def sample_pairs(self, batch: int, rng: np.random.Generator) -> PolicySample:
        """Sample ``batch`` pairs in one batched rollout."""

        InputValidator.validate_integer(batch, "batch", min_value=1)
        roll = self._rollout(Graph(record=False), batch, rng=rng)
        pairs = [pair_from_indices(roll.ops[i], roll.bins[i], self.n_tau) for i in range(batch)]
        return PolicySample(pairs, roll.ops, roll.bins, roll.log_prob.data.copy(), roll.entropy.data.copy())

    def sample_pair(self, rng: np.random.Generator) -> Tuple[SubpolicyPair, float, float]:
        sample = self.sample_pairs(1, rng)
        return sample.pairs[0], float(sample.log_probs[0]), float(sample.entropies[0])

    def log_probs(self, g: Graph, ops: np.ndarray, bins: np.ndarray) -> Tuple[Tensor, Tensor]:
        """Log-probabilities and entropies of given actions, recorded on ``g``."""

        ops, bins = self._check_actions(ops, bins)
        roll = self._rollout(g, ops.shape[0], ops=ops, bins=bins)
        return roll.log_prob, roll.entropy

    def log_prob_of(self, pair: SubpolicyPair) -> Tuple[float, float]:
        if pair.view1.n_tau != self.n_tau:
            raise ValidationError(
                f"Pair has {pair.view1.n_tau} steps per view, policy emits {self.n_tau}",
            )
        ops, bins = pair.indices()
        log_prob, entropy = self.log_probs(Graph(record=False), ops[None, :], bins[None, :])
        return float(log_prob.data[0]), float(entropy.data[0])

    def view2_logits(self, history: ActionHistory) -> np.ndarray:
        """Operation logits of the first view-2 step after a forced view-1 history."""

        if len(history) != self.n_tau:
            raise ValidationError(
                f"View-1 history must hold exactly {self.n_tau} actions, got {len(history)}",
            )
        ops = np.array([[int(op) for op, _ in history]], dtype=np.int64)
        bins = np.array([[int(b) for _, b in history]], dtype=np.int64)
        ops, bins = self._check_actions(ops, bins, expected_steps=self.n_tau)
        roll = self._rollout(
            Graph(record=False),
            1,
            ops=ops,
            bins=bins,
            steps=self.n_tau + 1,
            rng=np.random.default_rng(0),
        )
        return roll.op_logits[self.n_tau].data[0].copy()

    def _check_actions(
        self, ops: np.ndarray, bins: np.ndarray, expected_steps: Optional[int] = None
    ) -> Tuple[np.ndarray, np.ndarray]:
        ops = np.asarray(ops, dtype=np.int64)
        bins = np.asarray(bins, dtype=np.int64)
        steps = 2 * self.n_tau if expected_steps is None else expected_steps
        if ops.ndim != 2 or ops.shape != bins.shape or ops.shape[1] != steps:
            raise ValidationError(
                f"Actions must have shape [batch, {steps}]",
                context={"ops": list(ops.shape), "bins": list(bins.shape)},
            )
        if ops.size and (ops.min() < 0 or ops.max() >= NUM_OPS or bins.min() < 0 or bins.max() >= NUM_BINS):
            raise ValidationError(
                f"Op indices must lie in [0, {NUM_OPS}) and bins in [0, {NUM_BINS})",
            )
        return ops, bins

    # -- state --------------------------------------------------------------

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            raise CheckpointError(
                "Policy parameters do not match the network layout",
                context={"expected": sorted(self.params), "got": sorted(arrays)},
            )
        for name, tensor in self.params.items():
            if arrays[name].shape != tensor.shape:
                raise CheckpointError(
                    f"Parameter {name!r} has shape {list(arrays[name].shape)}, expected {list(tensor.shape)}"
                )
            tensor.data = np.array(arrays[name], dtype=np.float64)
            tensor.grad = None

    def snapshot(self, epoch: int) -> "PolicySnapshot":
        return snapshot(self, epoch)


@dataclass(frozen=True, eq=False)
class PolicySnapshot:
    """Frozen copy of a policy's parameters."""

    params: Mapping[str, np.ndarray]
    mode: PolicyMode
    n_tau: int
    hidden: int
    embed: int
    epoch: int
    version: int = SNAPSHOT_VERSION

    @property
    def policy_id(self) -> str:
        return f"{self.mode.value}-e{self.epoch:04d}"

    @cached_property
    def _net(self) -> PolicyNet:
        return restore(self)

    def sample_pairs(self, batch: int, rng: np.random.Generator) -> PolicySample:
        return self._net.sample_pairs(batch, rng)

    def sample_pair(self, rng: np.random.Generator) -> Tuple[SubpolicyPair, float, float]:
        return self._net.sample_pair(rng)


def snapshot(net: PolicyNet, epoch: int) -> PolicySnapshot:
    """Freeze the current parameters of ``net``."""

    frozen = {}
    for name, tensor in net.params.items():
        array = tensor.data.copy()
        array.setflags(write=False)
        frozen[name] = array
    return PolicySnapshot(
        params=MappingProxyType(frozen),
        mode=net.mode,
        n_tau=net.n_tau,
        hidden=net.hidden,
        embed=net.embed,
        epoch=int(epoch),
    )


def restore(snap: PolicySnapshot, mode: Optional[Union[PolicyMode, str]] = None) -> PolicyNet:
    """Rebuild a live network from ``snap``; ``mode`` must match when given."""

    if snap.version != SNAPSHOT_VERSION:
        raise CheckpointError(
            f"Snapshot version {snap.version} is not supported",
            hint=f"This build reads snapshot version {SNAPSHOT_VERSION}.",
        )
    if mode is not None and PolicyMode(mode) is not snap.mode:
        raise CheckpointError(
            f"Cannot restore a {snap.mode.value} snapshot as a {PolicyMode(mode).value} policy",
            context={"epoch": snap.epoch},
        )
    net = PolicyNet(snap.mode, snap.n_tau, hidden=snap.hidden, embed=snap.embed, head_init_scale=0.0)
    net.load_state(snap.params)
    return net


def save_snapshot(snap: PolicySnapshot, path: Union[str, Path]) -> Path:
    meta = {
        "kind": "policy",
        "mode": snap.mode.value,
        "n_tau": snap.n_tau,
        "hidden": snap.hidden,
        "embed": snap.embed,
        "epoch": snap.epoch,
        "version": snap.version,
    }
    path = save_arrays(path, snap.params, meta)
    logger.debug("policy.snapshot_saved", extra={"context": {"path": str(path), "epoch": snap.epoch}})
    return path


def load_snapshot(path: Union[str, Path]) -> PolicySnapshot:
    arrays, meta = load_arrays(path)
    if meta.get("kind") != "policy":
        raise CheckpointError(f"{path} does not hold a policy snapshot", context={"kind": meta.get("kind")})
    for array in arrays.values():
        array.setflags(write=False)
    return PolicySnapshot(
        params=MappingProxyType(arrays),
        mode=PolicyMode(meta["mode"]),
        n_tau=int(meta["n_tau"]),
        hidden=int(meta["hidden"]),
        embed=int(meta["embed"]),
        epoch=int(meta["epoch"]),
        version=int(meta["version"]),
    )


def sample_pair(net: PolicyNet, rng: np.random.Generator) -> Tuple[SubpolicyPair, float, float]:
    return net.sample_pair(rng)


def log_prob_of(net: PolicyNet, pair: SubpolicyPair) -> Tuple[float, float]:
    return net.log_prob_of(pair)


def view2_logits(net: PolicyNet, history: ActionHistory) -> np.ndarray:
    return net.view2_logits(history)
