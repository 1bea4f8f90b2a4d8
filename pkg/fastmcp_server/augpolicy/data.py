"""Dataset ingestion: CIFAR-10 binary batches, synthetic shapes, seeded batching."""

from __future__ import annotations

import os
import tarfile
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Optional, Union

import numpy as np
import requests
from PIL import Image, ImageDraw

from .core import AugPolicyError, ConfigError, DataFormatError, logger
from .schemas import RunConfig, SplitName
from .validators import InputValidator, ValidationError

CIFAR10_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
CIFAR10_DIRNAME = "cifar-10-batches-bin"
CIFAR10_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR10_TEST_FILES = ("test_batch.bin",)
CIFAR10_CLASSES = 10
_SIDE = 32
_RECORD = 1 + 3 * _SIDE * _SIDE

_REQUEST_TIMEOUT_SECONDS = 60
_MAX_ARCHIVE_BYTES = 200 * 1024 * 1024
_SHAPE_KINDS = ("circle", "square", "triangle", "cross")
_SYNTH_TEST_SEED_OFFSET = 10_007

SeedLike = Union[int, np.random.Generator]


@dataclass(frozen=True)
class Dataset:
    """Immutable image collection with optional aligned labels."""

    images: np.ndarray
    labels: Optional[np.ndarray]
    name: str
    split: str

    def __post_init__(self) -> None:
        images = np.asarray(self.images)
        if images.dtype != np.uint8 or images.ndim != 4 or images.shape[3] != 3:
            raise ValidationError(
                "Dataset images must be uint8 with shape (N, H, W, 3)",
                context={"dtype": str(images.dtype), "shape": list(images.shape)},
            )
        images.setflags(write=False)
        object.__setattr__(self, "images", images)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64)
            if labels.shape != (images.shape[0],):
                raise ValidationError(
                    "labels must align 1:1 with images",
                    context={"images": images.shape[0], "labels": list(labels.shape)},
                )
            labels.setflags(write=False)
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.images.shape[1])

    @property
    def num_classes(self) -> int:
        if self.labels is None or not len(self.labels):
            return 0
        return int(np.unique(self.labels).size)

    def subset(self, indices: np.ndarray) -> "Dataset":
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(self.images[indices].copy(), labels, self.name, self.split)


def _as_rng(seed: SeedLike) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _resolve_cifar_dir(directory: Union[str, Path]) -> Path:
    directory = Path(directory)
    nested = directory / CIFAR10_DIRNAME
    if nested.is_dir() and (nested / CIFAR10_TEST_FILES[0]).exists():
        return nested
    return directory


def _parse_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    blob = path.read_bytes()
    if not blob or len(blob) % _RECORD:
        complete = len(blob) // _RECORD
        raise DataFormatError(
            f"{path.name} is truncated or malformed: {len(blob)} bytes is not a multiple of {_RECORD}",
            hint="Re-download the CIFAR-10 binary archive.",
            context={"file": str(path), "byte_offset": complete * _RECORD, "records": complete},
        )
    records = np.frombuffer(blob, dtype=np.uint8).reshape(-1, _RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR10_CLASSES)
    if bad.size:
        raise DataFormatError(
            f"{path.name} has an invalid label {int(labels[bad[0]])}",
            context={"file": str(path), "byte_offset": int(bad[0]) * _RECORD},
        )
    images = records[:, 1:].reshape(-1, 3, _SIDE, _SIDE).transpose(0, 2, 3, 1)
    return np.ascontiguousarray(images), labels


def load_cifar10(
    directory: Union[str, Path],
    split: SplitName = "train",
    *,
    fraction: float = 1.0,
    seed: int = 0,
) -> Dataset:
    """Parse the standard CIFAR-10 binary layout.

    ``fraction`` keeps ``floor(fraction * n)`` records picked by ``seed``,
    in their original order.
    """

    InputValidator.validate_choice(split, "split", ("train", "test"))
    InputValidator.validate_float(fraction, "fraction", min_value=0.0, max_value=1.0, exclusive_min=True)
    root = _resolve_cifar_dir(directory)
    names = CIFAR10_TRAIN_FILES if split == "train" else CIFAR10_TEST_FILES
    missing = [name for name in names if not (root / name).is_file()]
    if missing:
        raise DataFormatError(
            f"CIFAR-10 files missing in {root}",
            hint="Run 'augpolicy download --data-dir <dir>' or point --data-dir at cifar-10-batches-bin.",
            context={"missing": missing},
        )

    parts = [_parse_cifar_file(root / name) for name in names]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    if fraction < 1.0:
        count = int(np.floor(fraction * len(labels)))
        keep = np.sort(np.random.default_rng(seed).choice(len(labels), size=count, replace=False))
        images, labels = images[keep], labels[keep]
    logger.info(
        "data.loaded",
        extra={"context": {"dataset": "cifar10", "split": split, "images": int(len(labels)), "fraction": fraction}},
    )
    return Dataset(images, labels, "cifar10", split)


def _draw_shape(draw: ImageDraw.ImageDraw, kind: str, cx: float, cy: float, radius: float, color: tuple) -> None:
    if kind == "circle":
        draw.ellipse((cx - radius, cy - radius, cx + radius, cy + radius), fill=color)
    elif kind == "square":
        draw.rectangle((cx - radius, cy - radius, cx + radius, cy + radius), fill=color)
    elif kind == "triangle":
        draw.polygon([(cx, cy - radius), (cx - radius, cy + radius), (cx + radius, cy + radius)], fill=color)
    else:
        arm = max(1.0, radius / 3.0)
        draw.rectangle((cx - radius, cy - arm, cx + radius, cy + arm), fill=color)
        draw.rectangle((cx - arm, cy - radius, cx + arm, cy + radius), fill=color)


def synth_shapes(n: int, classes: int = 2, seed: int = 0, *, size: int = _SIDE, split: str = "train") -> Dataset:
    """Colored geometric shapes on randomized backgrounds; the class is the shape kind."""

    InputValidator.validate_integer(classes, "classes", min_value=1, max_value=len(_SHAPE_KINDS))
    InputValidator.validate_integer(n, "n", min_value=classes)
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    images = np.empty((n, size, size, 3), dtype=np.uint8)
    for i, label in enumerate(labels):
        background = tuple(int(v) for v in rng.integers(0, 256, size=3))
        foreground = tuple(int((b + rng.integers(80, 176)) % 256) for b in background)
        radius = rng.uniform(0.18, 0.32) * size
        cx, cy = rng.uniform(radius, size - radius, size=2)
        canvas = Image.new("RGB", (size, size), background)
        _draw_shape(ImageDraw.Draw(canvas), _SHAPE_KINDS[int(label)], float(cx), float(cy), float(radius), foreground)
        images[i] = np.asarray(canvas, dtype=np.uint8)
    return Dataset(images, labels, "synth", split)


def batch_indices(n: int, batch_size: int, seed: SeedLike = 0, shuffle: bool = True) -> Iterator[np.ndarray]:
    """Index arrays of full batches; the short tail is dropped."""

    InputValidator.validate_integer(batch_size, "batch_size", min_value=1, max_value=n)
    order = _as_rng(seed).permutation(n) if shuffle else np.arange(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield order[start:start + batch_size]


def batches(ds: Dataset, batch_size: int, seed: SeedLike = 0, shuffle: bool = True) -> Iterator[np.ndarray]:
    for idx in batch_indices(len(ds), batch_size, seed, shuffle):
        yield ds.images[idx]


def download_cifar10(directory: Union[str, Path], *, url: str = CIFAR10_URL) -> Path:
    """Fetch and unpack the binary CIFAR-10 archive into ``directory``."""

    directory = Path(directory)
    target = directory / CIFAR10_DIRNAME
    expected = set(CIFAR10_TRAIN_FILES + CIFAR10_TEST_FILES)
    if target.is_dir() and all((target / name).is_file() for name in expected):
        return target

    logger.info("data.download", extra={"context": {"url": url, "directory": str(directory)}})
    try:
        response = requests.get(url, timeout=_REQUEST_TIMEOUT_SECONDS, stream=True)
        response.raise_for_status()
    except requests.RequestException as exc:
        raise AugPolicyError(
            f"CIFAR-10 download failed: {exc}",
            hint="Check network access or place the extracted files under --data-dir manually.",
            context={"url": url},
        ) from exc

    content_length = response.headers.get("content-length")
    if content_length and int(content_length) > _MAX_ARCHIVE_BYTES:
        raise AugPolicyError(
            f"Archive too large: {content_length} bytes exceeds {_MAX_ARCHIVE_BYTES} byte limit",
            context={"url": url, "size": content_length},
        )

    spool = tempfile.SpooledTemporaryFile(max_size=16 * 1024 * 1024)
    try:
        total_size = 0
        for chunk in response.iter_content(chunk_size=8192):
            spool.write(chunk)
            total_size += len(chunk)
            if total_size > _MAX_ARCHIVE_BYTES:
                raise AugPolicyError(
                    f"Archive download exceeded {_MAX_ARCHIVE_BYTES} byte limit",
                    context={"url": url},
                )
        if not total_size:
            raise AugPolicyError("Downloaded archive is empty", context={"url": url})
        spool.seek(0)
        target.mkdir(parents=True, exist_ok=True)
        try:
            with tarfile.open(fileobj=spool, mode="r:gz") as archive:
                for member in archive.getmembers():
                    name = Path(member.name).name
                    if not member.isfile() or name not in expected:
                        continue
                    source = archive.extractfile(member)
                    if source is not None:
                        (target / name).write_bytes(source.read())
        except tarfile.TarError as exc:
            raise DataFormatError(f"CIFAR-10 archive is corrupt: {exc}", context={"url": url}) from exc
    finally:
        spool.close()

    missing = sorted(name for name in expected if not (target / name).is_file())
    if missing:
        raise DataFormatError("CIFAR-10 archive lacks expected batch files", context={"missing": missing})
    return target


def load_dataset(cfg: RunConfig, split: SplitName = "train") -> Dataset:
    """Build the configured dataset split."""

    if cfg.data.source == "synth":
        if split == "train":
            return synth_shapes(cfg.data.n, cfg.data.classes, cfg.seed, size=cfg.data.image_size)
        return synth_shapes(
            cfg.data.test_n,
            cfg.data.classes,
            cfg.seed + _SYNTH_TEST_SEED_OFFSET,
            size=cfg.data.image_size,
            split="test",
        )
    directory = cfg.data.dir or os.environ.get("AUGPOLICY_DATA_DIR")
    if not directory:
        raise ConfigError(
            "data.dir is required for the cifar10 source",
            hint="Pass --data-dir or set AUGPOLICY_DATA_DIR.",
        )
    if cfg.data.image_size != _SIDE:
        raise ConfigError("CIFAR-10 images are 32x32; set data.image_size=32")
    return load_cifar10(directory, split, fraction=cfg.data.fraction, seed=cfg.seed)
