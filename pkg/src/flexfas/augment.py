"""DropModal training augmentation and deterministic test-time modality masking."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import FlexFasError, Modality, ModalitySample

DROPPABLE = (Modality.DEPTH, Modality.IR)


@dataclass(frozen=True)
class DropModalConfig:
    """Per-sample drop probabilities for depth and IR; RGB is never droppable."""

    p_depth: float = 0.3
    p_ir: float = 0.3
    seed: int = 0

    def __post_init__(self):
        for name, p in (("p_depth", self.p_depth), ("p_ir", self.p_ir)):
            if not 0.0 <= p <= 1.0:
                raise FlexFasError("VALUE_RANGE", f"{name}={p} not in [0, 1]")


def drop_modal(
    s: ModalitySample, cfg: DropModalConfig, rng: np.random.Generator
) -> ModalitySample:
    """Independently zero depth (p_depth) and IR (p_ir); RGB untouched.

    Returns a new sample; the drop pattern comes from the caller's rng stream,
    so equal seeds reproduce equal patterns.
    """
    probs = {Modality.DEPTH: cfg.p_depth, Modality.IR: cfg.p_ir}
    images = dict(s.images)
    for m in DROPPABLE:
        dropped = rng.random() < probs[m]
        if dropped and m in images:
            images[m] = np.zeros_like(images[m])
    return s.with_images(images)


def mask_modalities(s: ModalitySample, active: set[Modality]) -> ModalitySample:
    """Zero every modality not in `active`. Deterministic and idempotent."""
    if Modality.RGB not in active:
        raise FlexFasError("MISSING_RGB", "active set must contain RGB")
    images = {
        m: (arr if m in active else np.zeros_like(arr)) for m, arr in s.images.items()
    }
    return s.with_images(images)
