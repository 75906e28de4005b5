"""Parametric synthetic multi-modal dataset with tunable class separability.

Pixel model per modality array (values clamped to [0, 1]):

    x = base_texture + class_coeff * separability * sigma_pix * pattern + sigma_pix * noise

where class_coeff is +1/2 for bonafide and -1/2 for attack, noise is iid
standard normal, and sigma_pix = noise_sigma * INTENSITY_SCALE maps the
noise-sigma unit system into the [0, 1] intensity range (keeping the clamp
inactive in practice).

The discriminative pattern is a fixed low-frequency map normalized so its
mean over the whole array is 1/sqrt(n_elements). That makes the mean
intensity of an array a two-class Gaussian statistic with separation exactly
`separability` in units of its own noise, so the mean-threshold classifier
has closed-form AUC Phi(separability / sqrt(2)) while a spatially aware
model can still do better (the pattern is not constant).
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .core import FlexFasError, Label, MODALITIES, Modality, ModalitySample
from .protocols import DatasetManifest, ManifestRow, Split, write_manifest

INTENSITY_SCALE = 1.0 / 16.0

DEFAULT_SEPARABILITY = {Modality.RGB: 1.5, Modality.DEPTH: 3.0, Modality.IR: 0.5}

SPLIT_FRACTIONS = {Split.TRAIN: 0.6, Split.VAL: 0.2, Split.TEST: 0.2}


@dataclass(frozen=True)
class SynthConfig:
    n_subjects: int = 200
    frames_per_subject: int = 4
    image_size: tuple[int, int] = (32, 32)
    separability: dict[Modality, float] = field(
        default_factory=lambda: dict(DEFAULT_SEPARABILITY)
    )
    noise_sigma: float = 1.0
    attack_ratio: float = 0.5
    pai_types: tuple[str, ...] = ("print", "replay")
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1 or self.frames_per_subject < 1:
            raise FlexFasError("VALUE_RANGE", "subject and frame counts must be >= 1")
        if self.image_size[0] < 1 or self.image_size[1] < 1:
            raise FlexFasError("VALUE_RANGE", "image size must be >= 1")
        if self.noise_sigma <= 0:
            raise FlexFasError("VALUE_RANGE", "noise_sigma must be > 0")
        if not 0.0 < self.attack_ratio < 1.0:
            raise FlexFasError("VALUE_RANGE", "attack_ratio must be in (0, 1)")
        for m, s in self.separability.items():
            if not math.isfinite(s) or s < 0:
                raise FlexFasError("VALUE_RANGE", f"separability[{m.value}] invalid")

    @property
    def dataset_id(self) -> str:
        return f"synth-{self.seed}"


def mean_auc_closed_form(separability: float) -> float:
    """AUC of the mean-threshold classifier: Phi(separability / sqrt(2))."""
    return 0.5 * (1.0 + math.erf(separability / 2.0))


def _channels(m: Modality) -> int:
    return 3 if m is Modality.RGB else 1


# Width of each modality's discriminative bump as a fraction of min(H, W).
# The mean-normalization below pins the mean-statistic separation, so bump
# width only moves the matched-filter (Bayes) separation: a tight depth bump
# is learned almost immediately and dominates joint training, the broader RGB
# bump needs sustained gradient pressure, and the IR bump is near chance.
PATTERN_WIDTH_FRACTION = {Modality.RGB: 0.12, Modality.DEPTH: 0.06, Modality.IR: 0.30}


def _class_pattern(m: Modality, channels: int, h: int, w: int) -> np.ndarray:
    """Fixed smooth off-center bump, mean-normalized to 1/sqrt(n_elements).

    The normalization makes the array's mean intensity a two-class Gaussian
    statistic with separation exactly `separability`, whatever the bump
    shape, keeping the closed-form AUC calibration exact.
    """
    yy = np.arange(h)[:, None]
    xx = np.arange(w)[None, :]
    cy, cx = 0.6 * (h - 1), 0.4 * (w - 1)
    rho = max(PATTERN_WIDTH_FRACTION[m] * min(h, w), 0.5)
    raw = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * rho**2))
    raw = np.broadcast_to(raw, (channels, h, w)).copy()
    n = raw.size
    return raw / (raw.mean() * math.sqrt(n))


def _base_texture(channels: int, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Smooth per-modality background shared by both classes, range [0.35, 0.65]."""
    yy = np.arange(h)[:, None] / h
    xx = np.arange(w)[None, :] / w
    base = np.empty((channels, h, w))
    for c in range(channels):
        fy, fx = rng.integers(1, 3, size=2)
        phase_y, phase_x = rng.uniform(0, 2 * np.pi, size=2)
        base[c] = 0.5 + 0.12 * np.cos(2 * np.pi * fy * yy + phase_y) * np.cos(
            2 * np.pi * fx * xx + phase_x
        )
    return base


def _split_counts(n_subjects: int) -> dict[Split, int]:
    if n_subjects < 3:
        return {Split.TRAIN: n_subjects, Split.VAL: 0, Split.TEST: 0}
    n_val = max(1, round(SPLIT_FRACTIONS[Split.VAL] * n_subjects))
    n_test = max(1, round(SPLIT_FRACTIONS[Split.TEST] * n_subjects))
    return {Split.TRAIN: n_subjects - n_val - n_test, Split.VAL: n_val, Split.TEST: n_test}


def _relpath(m: Modality, sample_id: str) -> str:
    return f"{m.value}/{sample_id}.png"


def generate(cfg: SynthConfig) -> tuple[list[ModalitySample], DatasetManifest]:
    """Deterministic dataset from the config seed, plus a matching manifest.

    Subjects are split-disjoint (TRAIN/VAL/TEST); within each split the
    attack count is round(attack_ratio * n), so class balance is within one
    sample of the configured ratio.
    """
    rng = np.random.default_rng(cfg.seed)
    h, w = cfg.image_size
    sigma_pix = cfg.noise_sigma * INTENSITY_SCALE

    patterns = {m: _class_pattern(m, _channels(m), h, w) for m in MODALITIES}
    bases = {m: _base_texture(_channels(m), h, w, rng) for m in MODALITIES}

    # subject -> split, subject-disjoint
    counts = _split_counts(cfg.n_subjects)
    subject_order = rng.permutation(cfg.n_subjects)
    split_of_subject: dict[int, Split] = {}
    cursor = 0
    for split in (Split.TRAIN, Split.VAL, Split.TEST):
        for idx in subject_order[cursor : cursor + counts[split]]:
            split_of_subject[int(idx)] = split
        cursor += counts[split]

    # frame labels: exact attack count per split
    frames = [
        (subj, frame)
        for subj in range(cfg.n_subjects)
        for frame in range(cfg.frames_per_subject)
    ]
    labels: dict[tuple[int, int], Label] = {}
    pais: dict[tuple[int, int], str | None] = {}
    for split in (Split.TRAIN, Split.VAL, Split.TEST):
        members = [f for f in frames if split_of_subject[f[0]] is split]
        n_attack = round(cfg.attack_ratio * len(members))
        attack_slots = rng.permutation(len(members))[:n_attack]
        attack_set = {members[i] for i in attack_slots}
        for f in members:
            if f in attack_set:
                labels[f] = Label.ATTACK
                pais[f] = cfg.pai_types[rng.integers(len(cfg.pai_types))] if cfg.pai_types else None
            else:
                labels[f] = Label.BONAFIDE
                pais[f] = None

    samples: list[ModalitySample] = []
    rows: list[ManifestRow] = []
    for subj, frame in frames:
        sid = f"s{subj:04d}_f{frame}"
        label = labels[(subj, frame)]
        coeff = 0.5 if label is Label.BONAFIDE else -0.5
        images = {}
        for m in MODALITIES:
            shift = coeff * cfg.separability.get(m, 0.0) * sigma_pix * patterns[m]
            noise = sigma_pix * rng.standard_normal(patterns[m].shape)
            arr = np.clip(bases[m] + shift + noise, 0.0, 1.0)
            images[m] = arr.astype(np.float32)
        samples.append(
            ModalitySample(
                sample_id=sid,
                images=images,
                label=label,
                pai=pais[(subj, frame)],
                subject_id=f"s{subj:04d}",
                dataset_id=cfg.dataset_id,
            )
        )
        rows.append(
            ManifestRow(
                sample_id=sid,
                split=split_of_subject[subj],
                dataset_id=cfg.dataset_id,
                label=label,
                pai=pais[(subj, frame)],
                rgb_path=_relpath(Modality.RGB, sid),
                depth_path=_relpath(Modality.DEPTH, sid),
                ir_path=_relpath(Modality.IR, sid),
            )
        )
    return samples, DatasetManifest(tuple(rows))


def write_dataset(
    samples: list[ModalitySample], manifest: DatasetManifest, out_dir
) -> str:
    """Write 8-bit PNGs per modality plus manifest.csv; returns the manifest path."""
    for m in MODALITIES:
        os.makedirs(os.path.join(out_dir, m.value), exist_ok=True)
    for s in samples:
        for m, arr in s.images.items():
            data = np.round(arr * 255.0).astype(np.uint8)
            if data.shape[0] == 3:
                img = Image.fromarray(data.transpose(1, 2, 0), mode="RGB")
            else:
                img = Image.fromarray(data[0], mode="L")
            img.save(os.path.join(out_dir, _relpath(m, s.sample_id)))
    manifest_path = os.path.join(out_dir, "manifest.csv")
    write_manifest(manifest, manifest_path)
    return manifest_path
