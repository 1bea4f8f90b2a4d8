"""InfoNCE, the convolutional encoder, the three-phase training loop and the linear probe."""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from .augment import SubpolicyPair, apply_subpolicy, random_crop, random_pair
from .checkpoint import load_arrays, save_arrays
from .core import CheckpointError, NonFiniteError, logger
from .data import Dataset, batch_indices
from .metrics import get_metrics_collector, track_phase
from .numeric import Graph, SgdState, Tensor, backward, he_normal, parameter, sgd_step
from .policy import PolicyMode, PolicySnapshot
from .policy_queue import PolicyQueue
from .reward import EpochLossTracker
from .schemas import AugmentConfig, ContrastiveConfig, EncoderConfig, MetricsRecord, ProbeConfig, RunConfig
from .validators import InputValidator, ValidationError

_FEATURE_BATCH = 256


# ---------------------------------------------------------------------------
# Encoder
# ---------------------------------------------------------------------------

class Encoder:
    """Conv blocks (3x3 conv, ReLU, 2x2 max-pool) followed by a two-layer projection head."""

    def __init__(self, cfg: EncoderConfig, image_size: int = 32, rng: Optional[np.random.Generator] = None) -> None:
        rng = rng or np.random.default_rng(0)
        depth = 2 ** len(cfg.channels)
        if image_size % depth:
            raise ValidationError(
                f"image_size {image_size} must be divisible by {depth}",
                context={"channels": list(cfg.channels)},
            )
        self.cfg = cfg
        self.image_size = image_size
        self.params: Dict[str, Tensor] = {}
        in_channels = 3
        for i, out_channels in enumerate(cfg.channels):
            fan_in = in_channels * 9
            self.params[f"conv{i}_w"] = parameter(he_normal((out_channels, in_channels, 3, 3), fan_in, rng), f"conv{i}_w")
            self.params[f"conv{i}_b"] = parameter(np.zeros(out_channels), f"conv{i}_b")
            in_channels = out_channels
        side = image_size // depth
        self.feature_dim = in_channels * side * side
        self.params["proj1_w"] = parameter(he_normal((self.feature_dim, cfg.proj_hidden), self.feature_dim, rng), "proj1_w")
        self.params["proj1_b"] = parameter(np.zeros(cfg.proj_hidden), "proj1_b")
        self.params["proj2_w"] = parameter(he_normal((cfg.proj_hidden, cfg.proj_dim), cfg.proj_hidden, rng), "proj2_w")
        self.params["proj2_b"] = parameter(np.zeros(cfg.proj_dim), "proj2_b")

    @property
    def output_dim(self) -> int:
        return self.cfg.proj_dim

    def forward(self, g: Graph, x: Tensor) -> Tuple[Tensor, Tensor]:
        """Return ``(backbone features, projected embeddings)`` for ``x`` of shape [N,3,H,W]."""

        p = self.params
        h = x
        for i in range(len(self.cfg.channels)):
            h = g.maxpool2d(g.relu(g.conv2d(h, p[f"conv{i}_w"], p[f"conv{i}_b"], padding=1)))
        features = g.reshape(h, (x.shape[0], self.feature_dim))
        hidden = g.relu(g.add(g.matmul(features, p["proj1_w"]), p["proj1_b"]))
        z = g.add(g.matmul(hidden, p["proj2_w"]), p["proj2_b"])
        return features, z

    def checksum(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name].data).tobytes())
        return digest.hexdigest()

    def state(self) -> Dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def save(self, path: Union[str, Path]) -> Path:
        meta = {
            "kind": "encoder",
            "channels": list(self.cfg.channels),
            "proj_hidden": self.cfg.proj_hidden,
            "proj_dim": self.cfg.proj_dim,
            "image_size": self.image_size,
        }
        return save_arrays(path, self.state(), meta)

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Encoder":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "encoder":
            raise CheckpointError(f"{path} does not hold an encoder checkpoint", context={"kind": meta.get("kind")})
        cfg = EncoderConfig(channels=tuple(meta["channels"]), proj_hidden=meta["proj_hidden"], proj_dim=meta["proj_dim"])
        encoder = cls(cfg, int(meta["image_size"]))
        for name, tensor in encoder.params.items():
            if name not in arrays or arrays[name].shape != tensor.shape:
                raise CheckpointError(f"Encoder checkpoint is missing or misshapes {name!r}", context={"path": str(path)})
            tensor.data = arrays[name].copy()
        return encoder


def images_to_tensor(images: np.ndarray) -> Tensor:
    """uint8 [N,H,W,3] to float [N,3,H,W] scaled to [0,1]."""
    return Tensor(np.asarray(images, dtype=np.float64).transpose(0, 3, 1, 2) / 255.0)


def encode(enc: Encoder, images: np.ndarray) -> np.ndarray:
    """Projected embeddings without recording a graph."""
    _, z = enc.forward(Graph(record=False), images_to_tensor(images))
    return z.data


def backbone_features(enc: Encoder, images: np.ndarray, batch: int = _FEATURE_BATCH) -> np.ndarray:
    chunks = []
    for start in range(0, len(images), batch):
        features, _ = enc.forward(Graph(record=False), images_to_tensor(images[start:start + batch]))
        chunks.append(features.data)
    return np.concatenate(chunks) if chunks else np.zeros((0, enc.feature_dim))


# ---------------------------------------------------------------------------
# InfoNCE
# ---------------------------------------------------------------------------

@dataclass
class ViewBatch:
    z1: np.ndarray
    z2: np.ndarray

    def __post_init__(self) -> None:
        if self.z1.shape != self.z2.shape or self.z1.ndim != 2 or not len(self.z1):
            raise ValidationError(
                "View embeddings must be two aligned, non-empty [N, D] arrays",
                context={"z1": list(self.z1.shape), "z2": list(self.z2.shape)},
            )


def _check_nonzero(z: np.ndarray) -> None:
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms == 0):
        raise ValidationError(
            "InfoNCE needs nonzero embeddings",
            context={"zero_rows": np.flatnonzero(norms == 0).tolist()[:10]},
        )


def info_nce(g: Graph, z1: Tensor, z2: Tensor, temperature: float) -> Tensor:
    """Symmetric InfoNCE over 2N anchors with cosine similarity.

    Each anchor's denominator runs over the other 2N-1 embeddings, positive included.
    """

    ViewBatch(z1.data, z2.data)
    n = z1.shape[0]
    z = g.concat([z1, z2], axis=0)
    _check_nonzero(z.data)
    norms = g.sqrt(g.sum(g.mul(z, z), axis=1, keepdims=True))
    unit = g.div(z, norms)
    logits = g.mul(g.matmul(unit, g.transpose(unit)), 1.0 / temperature)
    logits = g.add(logits, np.diag(np.full(2 * n, -1e30)))
    positives = (np.arange(2 * n) + n) % (2 * n)
    picked = g.gather(g.log_softmax(logits, axis=1), positives)
    return g.neg(g.mean(picked))


def info_nce_value(z1: np.ndarray, z2: np.ndarray, temperature: float) -> float:
    return info_nce(Graph(record=False), Tensor(z1), Tensor(z2), temperature).item()


def info_nce_per_pair(z1: np.ndarray, z2: np.ndarray, temperature: float) -> np.ndarray:
    """Per-pair loss ``(L(z1_i, z2_i) + L(z2_i, z1_i)) / 2``; its mean is :func:`info_nce`."""

    ViewBatch(z1, z2)
    n = z1.shape[0]
    z = np.concatenate([z1, z2])
    _check_nonzero(z)
    unit = z / np.linalg.norm(z, axis=1, keepdims=True)
    logits = unit @ unit.T / temperature
    np.fill_diagonal(logits, -np.inf)
    shift = logits.max(axis=1, keepdims=True)
    lse = shift[:, 0] + np.log(np.exp(logits - shift).sum(axis=1))
    positives = (np.arange(2 * n) + n) % (2 * n)
    per_anchor = lse - logits[np.arange(2 * n), positives]
    return 0.5 * (per_anchor[:n] + per_anchor[n:])


# ---------------------------------------------------------------------------
# Views and policy sources
# ---------------------------------------------------------------------------

def build_views(
    images: np.ndarray,
    pairs: Sequence[SubpolicyPair],
    rng: np.random.Generator,
    *,
    signed: bool = True,
    workers: int = 1,
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply each image's pair; every image gets its own child stream."""

    if len(images) != len(pairs):
        raise ValidationError("one pair per image is required", context={"images": len(images), "pairs": len(pairs)})
    seeds = rng.integers(0, 2**63 - 1, size=len(images))

    def make(i: int) -> Tuple[np.ndarray, np.ndarray]:
        child = np.random.default_rng(int(seeds[i]))
        return (
            apply_subpolicy(images[i], pairs[i].view1, child, signed=signed),
            apply_subpolicy(images[i], pairs[i].view2, child, signed=signed),
        )

    if workers > 1 and len(images) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            views = list(pool.map(make, range(len(images))))
    else:
        views = [make(i) for i in range(len(images))]
    return np.stack([v[0] for v in views]), np.stack([v[1] for v in views])


class PolicySource(Protocol):
    policy_id: str

    def pairs(self, count: int, rng: np.random.Generator) -> List[SubpolicyPair]:
        ...


class RandomPolicySource:
    """Uniformly random subpolicies for both views."""

    policy_id = "random"

    def __init__(self, n_tau: int = 2) -> None:
        self.n_tau = n_tau

    def pairs(self, count: int, rng: np.random.Generator) -> List[SubpolicyPair]:
        return [random_pair(rng, self.n_tau) for _ in range(count)]


class QueuePolicySource:
    """Per image: draw a snapshot from the queue, then a pair from that snapshot."""

    def __init__(self, queue: PolicyQueue) -> None:
        self.queue = queue

    @property
    def policy_id(self) -> str:
        snapshots = self.queue.snapshots
        return snapshots[0].policy_id if snapshots else "empty"

    def pairs(self, count: int, rng: np.random.Generator) -> List[SubpolicyPair]:
        snapshots = self.queue.snapshots
        probs = self.queue.sampling_distribution()
        choice = rng.choice(len(snapshots), size=count, p=probs)
        out: List[Optional[SubpolicyPair]] = [None] * count
        for index in np.unique(choice):
            slots = np.flatnonzero(choice == index)
            sample = snapshots[int(index)].sample_pairs(len(slots), rng)
            for slot, pair in zip(slots, sample.pairs):
                out[int(slot)] = pair
        return out


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LrSchedule:
    """Linear warmup then cosine annealing to zero, per optimizer step."""

    base_lr: float
    total_steps: int
    warmup_steps: int = 0

    def lr(self, step: int) -> float:
        if step < self.warmup_steps:
            return self.base_lr * (step + 1) / self.warmup_steps
        span = max(1, self.total_steps - self.warmup_steps)
        progress = min(1.0, (step - self.warmup_steps) / span)
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class EpochStats:
    epoch: int
    phase: str
    mean_loss: float
    lr: float
    batches: int
    policy_id: str
    losses: List[float] = field(default_factory=list)

    def to_record(self) -> MetricsRecord:
        return MetricsRecord(
            epoch=self.epoch,
            phase=self.phase,
            mean_infonce=self.mean_loss,
            lr=self.lr,
            policy_id=self.policy_id,
            batches=self.batches,
        )


def train_epoch(
    enc: Encoder,
    dataset: Dataset,
    policy_source: PolicySource,
    tracker: EpochLossTracker,
    cfg: ContrastiveConfig,
    rng: np.random.Generator,
    *,
    optimizer: SgdState,
    schedule: LrSchedule,
    augment: Optional[AugmentConfig] = None,
    epoch: int = 1,
    phase: str = "train",
) -> EpochStats:
    """One pass of contrastive training; rolls the tracker over at the end."""

    augment = augment or AugmentConfig()
    if not len(dataset):
        raise ValidationError("Cannot train on an empty dataset")
    params = enc.params
    losses: List[float] = []
    lr = schedule.lr(optimizer.step)
    for idx in batch_indices(len(dataset), min(cfg.batch_size, len(dataset)), rng):
        images = dataset.images[idx]
        pairs = policy_source.pairs(len(idx), rng)
        v1, v2 = build_views(images, pairs, rng, signed=augment.signed_magnitudes, workers=augment.workers)
        g = Graph()
        _, z = enc.forward(g, images_to_tensor(np.concatenate([v1, v2])))
        n = len(idx)
        loss = info_nce(g, g.slice(z, slice(0, n)), g.slice(z, slice(n, 2 * n)), cfg.temperature)
        value = loss.item()
        if not math.isfinite(value):
            raise NonFiniteError(
                "Contrastive loss is not finite",
                hint="Lower contrastive.base_lr.",
                context={"epoch": epoch, "batch": len(losses)},
            )
        backward(g, loss, params.values())
        lr = schedule.lr(optimizer.step)
        sgd_step(optimizer, params, lr=lr)
        tracker.record(value)
        losses.append(value)
    tracker.rollover()
    return EpochStats(epoch, phase, float(np.mean(losses)), lr, len(losses), policy_source.policy_id, losses)


@dataclass
class PretrainResult:
    encoder: Encoder
    queue: PolicyQueue
    tracker: EpochLossTracker
    history: List[EpochStats] = field(default_factory=list)
    snapshots: List[PolicySnapshot] = field(default_factory=list)
    search_epochs: List[int] = field(default_factory=list)


def search_epochs(epochs: int, warmup_epochs: int, k: int) -> List[int]:
    """Epochs at which a policy search runs: after warmup, on multiples of ``k``."""
    return [e for e in range(1, epochs + 1) if e > warmup_epochs and e % k == 0]


@track_phase("pretrain")
def pretrain(
    dataset: Dataset,
    mode: Union[PolicyMode, str],
    cfg: RunConfig,
    *,
    on_record: Optional[Callable[[MetricsRecord], None]] = None,
    on_snapshot: Optional[Callable[[PolicySnapshot], None]] = None,
    reward_source_factory: Optional[Callable[[Encoder, EpochLossTracker], object]] = None,
) -> PretrainResult:
    """Warmup with random subpolicies, then alternate policy search and queue-driven training.

    ``mode="random"`` skips every search and trains on random subpolicies throughout.
    """

    from .ppo import BoundedInfoNCEReward, PpoEpochStats, search_policy

    mode_name = mode.value if isinstance(mode, PolicyMode) else InputValidator.validate_choice(
        mode, "mode", ("coviews", "indepviews", "random")
    )
    c = cfg.contrastive
    rng = np.random.default_rng(cfg.seed)
    encoder = Encoder(cfg.encoder, dataset.image_size, rng)
    tracker = EpochLossTracker()
    queue = PolicyQueue(cfg.queue.capacity, cfg.queue.base_prob)
    random_source = RandomPolicySource(cfg.augment.n_tau)
    queue_source = QueuePolicySource(queue)
    batch_size = min(c.batch_size, len(dataset))
    steps_per_epoch = len(dataset) // batch_size
    optimizer = SgdState(lr=c.lr, momentum=c.momentum, weight_decay=c.weight_decay)
    schedule = LrSchedule(c.lr, c.epochs * steps_per_epoch, c.schedule_warmup_epochs * steps_per_epoch)
    result = PretrainResult(encoder, queue, tracker)
    emit = on_record or (lambda record: None)
    planned = [] if mode_name == "random" else search_epochs(c.epochs, c.warmup_epochs, c.k)

    logger.info(
        "pretrain.start",
        extra={"context": {"mode": mode_name, "epochs": c.epochs, "warmup": c.warmup_epochs, "searches": planned}},
    )
    for epoch in range(1, c.epochs + 1):
        if epoch in planned:
            if reward_source_factory is not None:
                source = reward_source_factory(encoder, tracker)
            else:
                source = BoundedInfoNCEReward(encoder, tracker, cfg.reward, c.temperature, cfg.augment)

            def log_ppo(stats: PpoEpochStats, epoch: int = epoch) -> None:
                emit(stats.to_record(epoch))

            previous = result.snapshots[-1] if result.snapshots else None
            snap = search_policy(
                dataset,
                source,
                PolicyMode(mode_name),
                cfg.ppo,
                cfg.policy,
                rng,
                n_tau=cfg.augment.n_tau,
                epoch=epoch,
                init_from=previous,
                on_epoch=log_ppo,
            )
            queue.push(snap)
            get_metrics_collector().increment("policy_snapshots")
            result.snapshots.append(snap)
            result.search_epochs.append(epoch)
            if on_snapshot is not None:
                on_snapshot(snap)

        if epoch <= c.warmup_epochs or len(queue) == 0:
            source_for_epoch, phase = random_source, "warmup" if epoch <= c.warmup_epochs else "train"
        else:
            source_for_epoch, phase = queue_source, "train"
        stats = train_epoch(
            encoder,
            dataset,
            source_for_epoch,
            tracker,
            c,
            rng,
            optimizer=optimizer,
            schedule=schedule,
            augment=cfg.augment,
            epoch=epoch,
            phase=phase,
        )
        result.history.append(stats)
        get_metrics_collector().increment(f"{phase}_epochs")
        emit(stats.to_record())
        logger.info(
            "pretrain.epoch",
            extra={"context": {"epoch": epoch, "phase": phase, "loss": stats.mean_loss, "policy_id": stats.policy_id}},
        )
    return result


# ---------------------------------------------------------------------------
# Linear probe
# ---------------------------------------------------------------------------

@dataclass
class ProbeResult:
    accuracy: float
    train_accuracy: float
    seed: int
    epochs: int


def _cropped_features(enc: Encoder, images: np.ndarray, rng: np.random.Generator, padding: int) -> np.ndarray:
    cropped = np.stack([random_crop(img, rng, padding) for img in images])
    return backbone_features(enc, cropped)


@track_phase("linear_probe")
def linear_probe(
    enc: Encoder,
    train: Dataset,
    test: Dataset,
    cfg: Optional[ProbeConfig] = None,
    *,
    seed: int = 0,
    crop_views: int = 4,
) -> ProbeResult:
    """Train a softmax-regression layer on frozen, standardized backbone features.

    Training features come from ``crop_views`` random crops of every image,
    computed once and cycled across epochs.
    """

    cfg = cfg or ProbeConfig()
    for ds in (train, test):
        if ds.labels is None:
            raise ValidationError(f"The {ds.split} split has no labels to probe against")
    classes = int(max(train.labels.max(), test.labels.max())) + 1
    if train.num_classes < 2:
        raise ValidationError(
            "Linear probe needs at least two classes in the training split",
            context={"classes": train.num_classes},
        )
    rng = np.random.default_rng(seed)

    plain = backbone_features(enc, train.images)
    mean = plain.mean(axis=0)
    std = plain.std(axis=0) + 1e-6
    views = [(_cropped_features(enc, train.images, rng, cfg.crop_padding) - mean) / std for _ in range(max(1, crop_views))]
    test_x = (backbone_features(enc, test.images) - mean) / std
    train_x = (plain - mean) / std

    weight = parameter(rng.normal(0.0, 0.01, size=(enc.feature_dim, classes)), "probe_w")
    bias = parameter(np.zeros(classes), "probe_b")
    params = {"probe_w": weight, "probe_b": bias}
    batch = min(cfg.batch_size, len(train))
    steps = cfg.epochs * (len(train) // batch)
    schedule = LrSchedule(cfg.lr, steps, 0)
    optimizer = SgdState(lr=cfg.lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay)

    for epoch in range(cfg.epochs):
        features = views[epoch % len(views)]
        for idx in batch_indices(len(train), batch, rng):
            g = Graph()
            logits = g.add(g.matmul(Tensor(features[idx]), weight), bias)
            loss = g.neg(g.mean(g.gather(g.log_softmax(logits, axis=1), train.labels[idx])))
            if not math.isfinite(loss.item()):
                raise NonFiniteError("Probe loss is not finite", hint="Lower probe.lr.", context={"epoch": epoch})
            backward(g, loss, params.values())
            sgd_step(optimizer, params, lr=schedule.lr(optimizer.step))

    def accuracy(x: np.ndarray, y: np.ndarray) -> float:
        predictions = np.argmax(x @ weight.data + bias.data, axis=1)
        return float(np.mean(predictions == y))

    result = ProbeResult(accuracy(test_x, test.labels), accuracy(train_x, train.labels), seed, cfg.epochs)
    logger.info("probe.done", extra={"context": {"seed": seed, "accuracy": result.accuracy}})
    return result
