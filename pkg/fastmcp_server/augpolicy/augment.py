"""The discrete augmentation search space and its application to images.

Images are ``(height, width, 3)`` uint8 numpy arrays. Every learned step
carries one of 16 operations and a magnitude bin in ``0..10``; bins map
linearly onto each operation's range. Geometric operations resample with
nearest neighbour and fill uncovered pixels with gray 128.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, ImageEnhance, ImageOps

from .core import AugPolicyError, ShapeError
from .validators import InputValidator, ValidationError

NUM_BINS = 11
APPLY_PROB = 0.8
FILL = 128
_FILL_RGB = (FILL, FILL, FILL)


class OpKind(Enum):
    """The 16 transformations, in search-space index order."""

    SHEAR_X = "ShearX"
    SHEAR_Y = "ShearY"
    TRANSLATE_X = "TranslateX"
    TRANSLATE_Y = "TranslateY"
    ROTATE = "Rotate"
    AUTO_CONTRAST = "AutoContrast"
    INVERT = "Invert"
    EQUALIZE = "Equalize"
    SOLARIZE = "Solarize"
    POSTERIZE = "Posterize"
    CONTRAST = "Contrast"
    COLOR = "Color"
    BRIGHTNESS = "Brightness"
    SHARPNESS = "Sharpness"
    CUTOUT = "Cutout"
    IDENTITY = "Identity"

    @property
    def index(self) -> int:
        return _INDEX[self]

    @property
    def range(self) -> Optional[Tuple[float, float]]:
        """``(min, max)`` magnitude range, ``None`` when the op ignores magnitude."""
        return _RANGES[self]

    @property
    def symmetric(self) -> bool:
        return self in _SYMMETRIC

    @classmethod
    def from_index(cls, index: int) -> "OpKind":
        InputValidator.validate_integer(int(index), "op index", min_value=0, max_value=NUM_OPS - 1)
        return OPS[int(index)]

    @classmethod
    def from_name(cls, name: str) -> "OpKind":
        try:
            return cls(name)
        except ValueError:
            raise ValidationError(
                f"Unknown transformation {name!r}",
                hint=f"Known transformations: {[op.value for op in cls]}",
            ) from None


OPS: Tuple[OpKind, ...] = tuple(OpKind)
NUM_OPS = len(OPS)
_INDEX = {op: i for i, op in enumerate(OPS)}

_RANGES = {
    OpKind.SHEAR_X: (-0.3, 0.3),
    OpKind.SHEAR_Y: (-0.3, 0.3),
    OpKind.TRANSLATE_X: (-0.45, 0.45),
    OpKind.TRANSLATE_Y: (-0.45, 0.45),
    OpKind.ROTATE: (-30.0, 30.0),
    OpKind.AUTO_CONTRAST: None,
    OpKind.INVERT: None,
    OpKind.EQUALIZE: None,
    OpKind.SOLARIZE: (0.0, 256.0),
    OpKind.POSTERIZE: (4.0, 8.0),
    OpKind.CONTRAST: (0.1, 1.9),
    OpKind.COLOR: (0.1, 1.9),
    OpKind.BRIGHTNESS: (0.1, 1.9),
    OpKind.SHARPNESS: (0.1, 1.9),
    OpKind.CUTOUT: (0.0, 0.2),
    OpKind.IDENTITY: None,
}
_SYMMETRIC = frozenset({OpKind.SHEAR_X, OpKind.SHEAR_Y, OpKind.TRANSLATE_X, OpKind.TRANSLATE_Y, OpKind.ROTATE})


@dataclass(frozen=True)
class TransformStep:
    op: OpKind
    magnitude_bin: int
    apply_prob: float = APPLY_PROB

    def __post_init__(self) -> None:
        InputValidator.validate_integer(self.magnitude_bin, "magnitude_bin", min_value=0, max_value=NUM_BINS - 1)
        InputValidator.validate_float(self.apply_prob, "apply_prob", min_value=0.0, max_value=1.0)

    def encode(self) -> str:
        return f"{self.op.value}:{self.magnitude_bin}:{self.apply_prob:g}"


@dataclass(frozen=True)
class Subpolicy:
    """Steps applied in order to produce one view."""

    steps: Tuple[TransformStep, ...]

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValidationError("A subpolicy needs at least one step")

    @property
    def n_tau(self) -> int:
        return len(self.steps)

    def encode(self) -> str:
        return ";".join(step.encode() for step in self.steps)


@dataclass(frozen=True)
class SubpolicyPair:
    view1: Subpolicy
    view2: Subpolicy

    def __post_init__(self) -> None:
        if self.view1.n_tau != self.view2.n_tau:
            raise ValidationError(
                "Both views of a pair need the same number of steps",
                context={"view1": self.view1.n_tau, "view2": self.view2.n_tau},
            )

    def encode(self) -> str:
        return encode_pair(self)

    def indices(self) -> Tuple[np.ndarray, np.ndarray]:
        """Op indices and bins over all ``2 * n_tau`` steps, view 1 first."""
        steps = self.view1.steps + self.view2.steps
        return (
            np.array([s.op.index for s in steps], dtype=np.int64),
            np.array([s.magnitude_bin for s in steps], dtype=np.int64),
        )


def encode_pair(pair: SubpolicyPair) -> str:
    """Text form ``op:bin:prob;op:bin:prob | op:bin:prob;op:bin:prob``."""
    return f"{pair.view1.encode()} | {pair.view2.encode()}"


def _parse_subpolicy(text: str) -> Subpolicy:
    steps = []
    for chunk in text.strip().split(";"):
        parts = chunk.strip().split(":")
        if len(parts) != 3:
            raise ValidationError(f"Malformed transform step {chunk!r}", hint="Expected 'op:bin:prob'.")
        name, bin_text, prob_text = parts
        try:
            steps.append(TransformStep(OpKind.from_name(name), int(bin_text), float(prob_text)))
        except ValueError as exc:
            raise ValidationError(f"Malformed transform step {chunk!r}: {exc}") from exc
    return Subpolicy(tuple(steps))


def parse_pair(text: str) -> SubpolicyPair:
    halves = text.split("|")
    if len(halves) != 2:
        raise ValidationError(f"A pair needs exactly one '|' separator: {text!r}")
    return SubpolicyPair(_parse_subpolicy(halves[0]), _parse_subpolicy(halves[1]))


def pair_from_indices(ops: Sequence[int], bins: Sequence[int], n_tau: int) -> SubpolicyPair:
    if len(ops) != 2 * n_tau or len(bins) != 2 * n_tau:
        raise ValidationError(f"Expected {2 * n_tau} steps, got {len(ops)} ops and {len(bins)} bins")
    steps = tuple(TransformStep(OpKind.from_index(o), int(b)) for o, b in zip(ops, bins))
    return SubpolicyPair(Subpolicy(steps[:n_tau]), Subpolicy(steps[n_tau:]))


def magnitude_value(op: OpKind, bin: int) -> Optional[float]:
    """Magnitude of ``bin`` on the op's range: ``min + bin*(max-min)/10``.

    Returns ``None`` for AutoContrast, Invert, Equalize and Identity.
    """

    InputValidator.validate_integer(bin, "magnitude bin", min_value=0, max_value=NUM_BINS - 1)
    if op.range is None:
        return None
    low, high = op.range
    return low + bin * (high - low) / (NUM_BINS - 1)


def posterize_bits(bin: int) -> int:
    return int(min(8, max(4, round(magnitude_value(OpKind.POSTERIZE, bin)))))


def validate_image(image: np.ndarray) -> np.ndarray:
    if not isinstance(image, np.ndarray) or image.dtype != np.uint8 or image.ndim != 3 or image.shape[2] != 3:
        raise ShapeError(
            "Images must be uint8 arrays of shape (height, width, 3)",
            context={
                "type": type(image).__name__,
                "dtype": str(getattr(image, "dtype", None)),
                "shape": list(getattr(image, "shape", ())),
            },
        )
    return image


def _applied_magnitude(op: OpKind, bin: int, rng: np.random.Generator, signed: bool) -> float:
    if op.symmetric and signed:
        magnitude = bin * op.range[1] / (NUM_BINS - 1)
        return -magnitude if rng.random() < 0.5 else magnitude
    return magnitude_value(op, bin)


def _affine(image: np.ndarray, coeffs: Tuple[float, ...]) -> np.ndarray:
    pil = Image.fromarray(image)
    out = pil.transform(pil.size, Image.Transform.AFFINE, coeffs, resample=Image.Resampling.NEAREST, fillcolor=_FILL_RGB)
    return np.asarray(out, dtype=np.uint8).copy()


def _enhance(image: np.ndarray, enhancer, factor: float) -> np.ndarray:
    return np.asarray(enhancer(Image.fromarray(image)).enhance(factor), dtype=np.uint8).copy()


def _cutout(image: np.ndarray, fraction: float, rng: np.random.Generator) -> np.ndarray:
    height, width = image.shape[:2]
    side = int(round(fraction * min(height, width)))
    out = image.copy()
    if side <= 0:
        return out
    top = int(rng.integers(0, height - side + 1))
    left = int(rng.integers(0, width - side + 1))
    out[top:top + side, left:left + side, :] = FILL
    return out


def _apply_op(image: np.ndarray, op: OpKind, bin: int, rng: np.random.Generator, signed: bool) -> np.ndarray:
    if op is OpKind.IDENTITY:
        return image.copy()
    if op is OpKind.INVERT:
        return 255 - image
    if op is OpKind.AUTO_CONTRAST:
        return np.asarray(ImageOps.autocontrast(Image.fromarray(image)), dtype=np.uint8).copy()
    if op is OpKind.EQUALIZE:
        return np.asarray(ImageOps.equalize(Image.fromarray(image)), dtype=np.uint8).copy()
    if op is OpKind.POSTERIZE:
        return np.asarray(ImageOps.posterize(Image.fromarray(image), posterize_bits(bin)), dtype=np.uint8).copy()

    magnitude = _applied_magnitude(op, bin, rng, signed)
    if op is OpKind.SOLARIZE:
        return np.where(image >= magnitude, 255 - image, image).astype(np.uint8)
    if op is OpKind.CUTOUT:
        return _cutout(image, magnitude, rng)
    if op is OpKind.CONTRAST:
        return _enhance(image, ImageEnhance.Contrast, magnitude)
    if op is OpKind.COLOR:
        return _enhance(image, ImageEnhance.Color, magnitude)
    if op is OpKind.BRIGHTNESS:
        return _enhance(image, ImageEnhance.Brightness, magnitude)
    if op is OpKind.SHARPNESS:
        return _enhance(image, ImageEnhance.Sharpness, magnitude)

    # geometric ops; a zero magnitude is the identity
    if magnitude == 0:
        return image.copy()
    height, width = image.shape[:2]
    if op is OpKind.SHEAR_X:
        return _affine(image, (1, magnitude, 0, 0, 1, 0))
    if op is OpKind.SHEAR_Y:
        return _affine(image, (1, 0, 0, magnitude, 1, 0))
    if op is OpKind.TRANSLATE_X:
        offset = int(round(magnitude * width))
        return image.copy() if offset == 0 else _affine(image, (1, 0, offset, 0, 1, 0))
    if op is OpKind.TRANSLATE_Y:
        offset = int(round(magnitude * height))
        return image.copy() if offset == 0 else _affine(image, (1, 0, 0, 0, 1, offset))
    if op is OpKind.ROTATE:
        rotated = Image.fromarray(image).rotate(magnitude, resample=Image.Resampling.NEAREST, fillcolor=_FILL_RGB)
        return np.asarray(rotated, dtype=np.uint8).copy()
    raise AugPolicyError(f"No implementation for {op.value}")  # pragma: no cover


def apply_transform(
    image: np.ndarray,
    step: TransformStep,
    rng: np.random.Generator,
    *,
    signed: bool = True,
) -> np.ndarray:
    """Apply ``step`` with probability ``step.apply_prob``; otherwise return a copy."""

    validate_image(image)
    if rng.random() >= step.apply_prob:
        return image.copy()
    return _apply_op(image, step.op, step.magnitude_bin, rng, signed)


def apply_subpolicy(
    image: np.ndarray,
    subpolicy: Subpolicy,
    rng: np.random.Generator,
    *,
    signed: bool = True,
) -> np.ndarray:
    """Apply every step in order, each behind its own Bernoulli gate."""

    out = validate_image(image)
    for step in subpolicy.steps:
        out = apply_transform(out, step, rng, signed=signed)
    return out


def random_subpolicy(rng: np.random.Generator, n_tau: int = 2) -> Subpolicy:
    """Uniform op and uniform bin per step."""

    ops = rng.integers(0, NUM_OPS, size=n_tau)
    bins = rng.integers(0, NUM_BINS, size=n_tau)
    return Subpolicy(tuple(TransformStep(OPS[int(o)], int(b)) for o, b in zip(ops, bins)))


def random_pair(rng: np.random.Generator, n_tau: int = 2) -> SubpolicyPair:
    return SubpolicyPair(random_subpolicy(rng, n_tau), random_subpolicy(rng, n_tau))


def random_crop(image: np.ndarray, rng: np.random.Generator, padding: int = 4) -> np.ndarray:
    """Zero-pad by ``padding`` on each side, then crop back to the original size."""

    validate_image(image)
    if padding == 0:
        return image.copy()
    height, width = image.shape[:2]
    padded = np.pad(image, ((padding, padding), (padding, padding), (0, 0)))
    top = int(rng.integers(0, 2 * padding + 1))
    left = int(rng.integers(0, 2 * padding + 1))
    return padded[top:top + height, left:left + width].copy()


def describe_ops() -> List[dict]:
    """Search-space table: name, index and magnitude range per op."""
    return [
        {"index": op.index, "name": op.value, "range": list(op.range) if op.range else None}
        for op in OPS
    ]
