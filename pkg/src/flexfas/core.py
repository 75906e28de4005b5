"""Shared data model: modalities, samples, feature bundles, score records."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch


class Modality(Enum):
    RGB = "rgb"
    DEPTH = "depth"
    IR = "ir"


# Canonical modality order. RGB is the anchor: it must be present in every
# sample and in every evaluation modality set.
MODALITIES = (Modality.RGB, Modality.DEPTH, Modality.IR)


class Label(Enum):
    BONAFIDE = "bonafide"
    ATTACK = "attack"


class FlexFasError(Exception):
    """Error with a machine-readable code (SHAPE_MISMATCH, MISSING_RGB, ...)."""

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ModalitySample:
    """One capture: per-modality image arrays [C, H, W] with values in [0, 1].

    RGB is always present; depth/IR may be absent (downstream code treats an
    absent modality as all-zero input). Arrays are frozen after construction,
    so samples are safe to share across workers.
    """

    sample_id: str
    images: dict[Modality, np.ndarray]
    label: Label
    pai: str | None = None
    subject_id: str = ""
    dataset_id: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "images", {m: _freeze(a) for m, a in self.images.items()}
        )

    def with_images(self, images: dict[Modality, np.ndarray]) -> "ModalitySample":
        return ModalitySample(
            sample_id=self.sample_id,
            images=images,
            label=self.label,
            pai=self.pai,
            subject_id=self.subject_id,
            dataset_id=self.dataset_id,
        )

    @property
    def height_width(self) -> tuple[int, int]:
        rgb = self.images[Modality.RGB]
        return int(rgb.shape[-2]), int(rgb.shape[-1])


def validate_sample(s: ModalitySample) -> None:
    """Check sample invariants; raise FlexFasError naming the violated one.

    Codes: MISSING_RGB (no RGB array), SHAPE_MISMATCH (rank/channel/size
    disagreement), VALUE_RANGE (non-finite or outside [0, 1]).
    """
    if Modality.RGB not in s.images:
        raise FlexFasError("MISSING_RGB", f"sample {s.sample_id} has no RGB array")
    hw = None
    for m in MODALITIES:
        if m not in s.images:
            continue
        arr = s.images[m]
        if arr.ndim != 3 or arr.shape[0] not in (1, 3):
            raise FlexFasError(
                "SHAPE_MISMATCH",
                f"sample {s.sample_id} {m.value}: expected [C in {{1,3}}, H, W], got {arr.shape}",
            )
        if hw is None:
            hw = arr.shape[1:]
        elif arr.shape[1:] != hw:
            raise FlexFasError(
                "SHAPE_MISMATCH",
                f"sample {s.sample_id} {m.value}: spatial size {arr.shape[1:]} != {hw}",
            )
        if not np.all(np.isfinite(arr)):
            raise FlexFasError(
                "VALUE_RANGE", f"sample {s.sample_id} {m.value}: non-finite values"
            )
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise FlexFasError(
                "VALUE_RANGE",
                f"sample {s.sample_id} {m.value}: values outside [0, 1]",
            )


@dataclass(frozen=True)
class FeatureBundle:
    """Per-modality feature maps, one tensor [B, C', H', W'] per modality.

    All three modalities are always present (missing inputs were zero-filled
    before encoding) and share one shape.
    """

    features: dict[Modality, torch.Tensor]

    def __post_init__(self):
        shapes = {m: tuple(t.shape) for m, t in self.features.items()}
        if set(self.features) != set(MODALITIES):
            raise FlexFasError(
                "SHAPE_MISMATCH", f"bundle must carry all modalities, got {list(shapes)}"
            )
        first = next(iter(shapes.values()))
        if any(sh != first for sh in shapes.values()) or len(first) != 4:
            raise FlexFasError(
                "SHAPE_MISMATCH", f"bundle entries must share one [B,C,H,W] shape: {shapes}"
            )

    @property
    def shape(self) -> tuple[int, int, int]:
        b, c, h, w = self.features[Modality.RGB].shape
        return int(c), int(h), int(w)


@dataclass(frozen=True)
class ScoreRecord:
    """Scored sample: liveness score in [0, 1], higher = more bonafide."""

    sample_id: str
    score: float
    label: Label
    pai: str | None = None

    def __post_init__(self):
        if not np.isfinite(self.score) or not 0.0 <= self.score <= 1.0:
            raise FlexFasError(
                "VALUE_RANGE", f"score {self.score} for {self.sample_id} not in [0, 1]"
            )
