"""Configuration models, record schemas and type aliases."""

from __future__ import annotations

from typing import Any, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

ModeName = Literal["coviews", "indepviews", "random"]
DatasetSource = Literal["synth", "cifar10"]
SplitName = Literal["train", "test"]
PhaseName = Literal["warmup", "train", "search"]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataConfig(_Section):
    """Dataset source and size."""

    source: DatasetSource = "synth"
    dir: Optional[str] = Field(default=None, description="CIFAR-10 directory (binary layout).")
    n: int = Field(default=500, ge=1, description="Synthetic training images.")
    test_n: int = Field(default=200, ge=1, description="Synthetic held-out images.")
    classes: int = Field(default=2, ge=1, le=4)
    fraction: float = Field(default=1.0, gt=0.0, le=1.0)
    image_size: int = Field(default=32, ge=8)

    @field_validator("dir", mode="before")
    @classmethod
    def _blank_is_none(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip() in ("", "None", "none"):
            return None
        return value


class EncoderConfig(_Section):
    """Convolutional backbone and projection head sizes."""

    channels: Tuple[int, ...] = (16, 32, 64, 64)
    proj_hidden: int = Field(default=128, ge=1)
    proj_dim: int = Field(default=64, ge=1)

    @field_validator("channels", mode="before")
    @classmethod
    def _split_channels(cls, value: Any) -> Any:
        if isinstance(value, str):
            return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
        return value

    @field_validator("channels")
    @classmethod
    def _positive_channels(cls, value: Tuple[int, ...]) -> Tuple[int, ...]:
        if not value or any(c < 1 for c in value):
            raise ValueError("channels must be a non-empty list of positive integers")
        return value


class ContrastiveConfig(_Section):
    temperature: float = Field(default=0.5, gt=0.0)
    batch_size: int = Field(default=64, ge=2)
    epochs: int = Field(default=60, ge=1)
    warmup_epochs: int = Field(default=20, ge=1)
    k: int = Field(default=5, ge=1, description="Policy refresh period in epochs.")
    base_lr: float = Field(default=0.03, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
    schedule_warmup_epochs: int = Field(default=10, ge=0)

    @property
    def lr(self) -> float:
        """Base learning rate scaled linearly with batch size."""
        return self.base_lr * self.batch_size / 256.0


class AugmentConfig(_Section):
    n_tau: int = Field(default=2, ge=1, description="Transformations per subpolicy.")
    signed_magnitudes: bool = True
    workers: int = Field(default=1, ge=1)


class PolicyConfig(_Section):
    hidden: int = Field(default=64, ge=1)
    embed: int = Field(default=16, ge=1)
    head_init_scale: float = Field(default=0.01, ge=0.0)


class RewardConfig(_Section):
    """Bounded InfoNCE reward parameters."""

    th: float = Field(default=1.3, gt=1.0)
    b: float = Field(default=0.2, gt=0.0)
    per_sample: bool = False


class PpoConfig(_Section):
    ppo_epochs: int = Field(default=100, ge=1)
    samples_per_epoch: int = Field(default=128, ge=2)
    updates_per_epoch: int = Field(default=4, ge=1)
    update_batch: int = Field(default=16, ge=1)
    entropy_coef: float = Field(default=0.05, ge=0.0)
    clip: float = Field(default=0.2, gt=0.0, lt=1.0)
    lr: float = Field(default=5e-5, gt=0.0)
    collection_batch: int = Field(default=32, ge=2)
    warm_start: bool = False

    @model_validator(mode="after")
    def _check_batching(self) -> "PpoConfig":
        if self.updates_per_epoch * self.update_batch > self.samples_per_epoch:
            raise ValueError(
                "updates_per_epoch * update_batch must not exceed samples_per_epoch "
                f"({self.updates_per_epoch} * {self.update_batch} > {self.samples_per_epoch})"
            )
        if self.samples_per_epoch % self.collection_batch != 0:
            raise ValueError(
                f"collection_batch {self.collection_batch} must divide samples_per_epoch {self.samples_per_epoch}"
            )
        return self


class QueueConfig(_Section):
    capacity: int = Field(default=5, ge=1)
    base_prob: float = Field(default=0.5, gt=0.0, lt=1.0)


class ProbeConfig(_Section):
    """Linear evaluation on frozen backbone features."""

    epochs: int = Field(default=100, ge=1)
    batch_size: int = Field(default=256, ge=1)
    lr: float = Field(default=0.5, gt=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=0.0, ge=0.0)
    crop_padding: int = Field(default=4, ge=0)
    seeds: int = Field(default=5, ge=1)


class RunConfig(_Section):
    """Every knob of a run; each field has a default."""

    seed: int = 0
    out: str = "runs/default"
    mode: ModeName = "coviews"
    data: DataConfig = Field(default_factory=DataConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    contrastive: ContrastiveConfig = Field(default_factory=ContrastiveConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)
    reward: RewardConfig = Field(default_factory=RewardConfig)
    ppo: PpoConfig = Field(default_factory=PpoConfig)
    queue: QueueConfig = Field(default_factory=QueueConfig)
    probe: ProbeConfig = Field(default_factory=ProbeConfig)

    @model_validator(mode="after")
    def _image_fits_encoder(self) -> "RunConfig":
        depth = 2 ** len(self.encoder.channels)
        if self.data.image_size % depth != 0:
            raise ValueError(
                f"data.image_size {self.data.image_size} must be divisible by {depth} "
                f"for {len(self.encoder.channels)} pooling blocks"
            )
        return self


class MetricsRecord(_Section):
    """One line of ``metrics.jsonl``."""

    epoch: int = Field(ge=0)
    phase: PhaseName
    mean_infonce: Optional[float] = None
    lr: Optional[float] = None
    policy_id: Optional[str] = None
    batches: Optional[int] = None
    ppo_epoch: Optional[int] = None
    mean_reward: Optional[float] = None
    mean_entropy: Optional[float] = None
    surrogate_loss: Optional[float] = None
    clip_fraction: Optional[float] = None


class ProbeReport(_Section):
    """Contents of ``probe.json``."""

    run_dir: str
    dataset: DatasetSource
    features: Literal["backbone"] = "backbone"
    seeds: List[int]
    accuracies: List[float]
    mean: float
    std: float

    @model_validator(mode="after")
    def _aligned(self) -> "ProbeReport":
        if len(self.seeds) != len(self.accuracies) or not self.seeds:
            raise ValueError("seeds and accuracies must be non-empty and aligned")
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        return self
