"""Flexible-modal protocols, manifest ingestion, and the run drivers.

Four deployment protocols share one training recipe (all three modalities)
and differ only in the evaluation modality set:

    P1: RGB        P2: RGB+depth        P3: RGB+IR        P4: RGB+depth+IR

UNIFIED mode trains a single tri-modal model and evaluates it under every
protocol from the one checkpoint; SEPARATE mode trains one model per
protocol on that protocol's modality subset (the other modalities are zeroed
during training as well).
"""
from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from PIL import Image

from .augment import mask_modalities
from .backbones import FlexModel, ModelConfig, build_model
from .core import (
    FlexFasError,
    Label,
    MODALITIES,
    Modality,
    ModalitySample,
    ScoreRecord,
    validate_sample,
)
from .metrics import EvalReport, ThresholdRule, build_report
from .trainer import TrainConfig, TrainResult, train

PROTOCOL_EVAL_SETS: dict[str, frozenset[Modality]] = {
    "P1": frozenset({Modality.RGB}),
    "P2": frozenset({Modality.RGB, Modality.DEPTH}),
    "P3": frozenset({Modality.RGB, Modality.IR}),
    "P4": frozenset(MODALITIES),
}

TRAIN_MODALITIES = frozenset(MODALITIES)


@dataclass(frozen=True)
class ProtocolSpec:
    id: str
    eval_modalities: frozenset[Modality]
    threshold_rule: ThresholdRule = ThresholdRule.EER_ON_VALIDATION
    # training always uses the full modality set ("train one for all")
    train_modalities: frozenset[Modality] = TRAIN_MODALITIES

    def __post_init__(self):
        if self.train_modalities != TRAIN_MODALITIES:
            raise FlexFasError("VALUE_RANGE", "protocols always train tri-modal")
        if Modality.RGB not in self.eval_modalities:
            raise FlexFasError("MISSING_RGB", f"{self.id}: eval set must contain RGB")


def standard_protocols(
    ids: list[str] | None = None,
    rule: ThresholdRule = ThresholdRule.EER_ON_VALIDATION,
) -> list[ProtocolSpec]:
    ids = ids or list(PROTOCOL_EVAL_SETS)
    return [ProtocolSpec(i, PROTOCOL_EVAL_SETS[i], rule) for i in ids]


# --- manifest ------------------------------------------------------------------


class Split(Enum):
    TRAIN = "train"
    VAL = "val"
    TEST = "test"


MANIFEST_COLUMNS = [
    "sample_id",
    "split",
    "dataset_id",
    "label",
    "pai",
    "rgb_path",
    "depth_path",
    "ir_path",
]


@dataclass(frozen=True)
class ManifestRow:
    sample_id: str
    split: Split
    dataset_id: str
    label: Label
    pai: str | None
    rgb_path: str
    depth_path: str | None
    ir_path: str | None


@dataclass(frozen=True)
class DatasetManifest:
    rows: tuple[ManifestRow, ...]

    def split_rows(self, split: Split) -> list[ManifestRow]:
        return [r for r in self.rows if r.split is split]

    @property
    def dataset_ids(self) -> set[str]:
        return {r.dataset_id for r in self.rows}


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest CSV (header + one row per sample)."""
    if not os.path.exists(path):
        raise FlexFasError("FILE_NOT_FOUND", f"manifest {path} does not exist")
    rows: list[ManifestRow] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise FlexFasError("PARSE_ERROR", "line 1: empty manifest") from None
        if header != MANIFEST_COLUMNS:
            raise FlexFasError(
                "PARSE_ERROR", f"line 1: header must be {','.join(MANIFEST_COLUMNS)}"
            )
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(MANIFEST_COLUMNS):
                raise FlexFasError(
                    "PARSE_ERROR",
                    f"line {lineno}: expected {len(MANIFEST_COLUMNS)} fields, got {len(rec)}",
                )
            sid, split, dataset_id, label, pai, rgb, depth, ir = rec
            if sid in seen:
                raise FlexFasError("DUPLICATE_ID", f"line {lineno}: duplicate id {sid}")
            seen.add(sid)
            if not rgb:
                raise FlexFasError(
                    "MISSING_RGB_PATH", f"line {lineno}: sample {sid} lacks an rgb path"
                )
            try:
                row = ManifestRow(
                    sample_id=sid,
                    split=Split(split),
                    dataset_id=dataset_id,
                    label=Label(label),
                    pai=pai or None,
                    rgb_path=rgb,
                    depth_path=depth or None,
                    ir_path=ir or None,
                )
            except ValueError as e:
                raise FlexFasError("PARSE_ERROR", f"line {lineno}: {e}") from None
            rows.append(row)
    return DatasetManifest(tuple(rows))


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        for r in manifest.rows:
            writer.writerow(
                [
                    r.sample_id,
                    r.split.value,
                    r.dataset_id,
                    r.label.value,
                    r.pai or "",
                    r.rgb_path,
                    r.depth_path or "",
                    r.ir_path or "",
                ]
            )


def _read_image(path, expect_color: bool) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img.convert("RGB" if expect_color else "L"), dtype=np.float32)
    arr = arr / 255.0
    if expect_color:
        return arr.transpose(2, 0, 1)
    return arr[None, :, :]


def load_samples(manifest: DatasetManifest, root) -> dict[Split, list[ModalitySample]]:
    """Read image files into samples, grouped by split. Paths resolve against root."""
    out: dict[Split, list[ModalitySample]] = {s: [] for s in Split}
    for r in manifest.rows:
        images = {Modality.RGB: _read_image(os.path.join(root, r.rgb_path), True)}
        if r.depth_path:
            images[Modality.DEPTH] = _read_image(os.path.join(root, r.depth_path), False)
        if r.ir_path:
            images[Modality.IR] = _read_image(os.path.join(root, r.ir_path), False)
        sample = ModalitySample(
            sample_id=r.sample_id,
            images=images,
            label=r.label,
            pai=r.pai,
            subject_id=r.sample_id.rsplit("_", 1)[0],
            dataset_id=r.dataset_id,
        )
        validate_sample(sample)
        out[r.split].append(sample)
    return out


# --- run plans and drivers -----------------------------------------------------


class RunMode(Enum):
    UNIFIED = "unified"
    SEPARATE = "separate"


@dataclass(frozen=True)
class RunPlan:
    mode: RunMode
    protocols: tuple[ProtocolSpec, ...]
    model: ModelConfig
    trainer: TrainConfig


@dataclass
class SampleSet:
    """In-memory dataset: intra-dataset splits plus an optional cross-dataset test."""

    by_split: dict[Split, list[ModalitySample]]
    cross_test: list[ModalitySample] = field(default_factory=list)

    def split(self, s: Split) -> list[ModalitySample]:
        return self.by_split.get(s, [])


@dataclass
class RunResult:
    reports: dict[str, EvalReport] = field(default_factory=dict)
    cross_reports: dict[str, EvalReport] = field(default_factory=dict)
    scores: dict[str, list[ScoreRecord]] = field(default_factory=dict)
    models: dict[str, FlexModel] = field(default_factory=dict)
    train_results: dict[str, TrainResult] = field(default_factory=dict)


_SCORE_CHUNK = 256


def score_samples(
    model: FlexModel, samples: list[ModalitySample], active: frozenset[Modality]
) -> list[ScoreRecord]:
    """Mask each sample to the active set, then score it (masking comes first)."""
    records: list[ScoreRecord] = []
    for start in range(0, len(samples), _SCORE_CHUNK):
        chunk = [
            mask_modalities(s, set(active)) for s in samples[start : start + _SCORE_CHUNK]
        ]
        scores = model.predict_batch(chunk, set(active))
        records.extend(
            ScoreRecord(s.sample_id, float(v), s.label, s.pai)
            for s, v in zip(chunk, scores)
        )
    return records


def evaluate_protocols(
    model: FlexModel, protocols: list[ProtocolSpec], data: SampleSet
) -> RunResult:
    """Evaluation phase only: per-protocol reports from one frozen model.

    Intra-dataset reports follow each protocol's threshold rule; cross-dataset
    reports always use the fixed 0.5 threshold.
    """
    result = RunResult()
    for p in protocols:
        val = score_samples(model, data.split(Split.VAL), p.eval_modalities)
        test = score_samples(model, data.split(Split.TEST), p.eval_modalities)
        result.scores[f"{p.id}_val"] = val
        result.scores[f"{p.id}_test"] = test
        result.reports[p.id] = build_report(val, test, p.threshold_rule)
        if data.cross_test:
            cross = score_samples(model, data.cross_test, p.eval_modalities)
            result.scores[f"{p.id}_cross"] = cross
            result.cross_reports[p.id] = build_report(
                None, cross, ThresholdRule.FIXED_0_5
            )
    return result


def train_unified(plan: RunPlan, data: SampleSet) -> tuple[FlexModel, TrainResult]:
    """One tri-modal model trained on the TRAIN split with all modalities."""
    model = build_model(plan.model, seed=plan.trainer.seed)
    tr = train(model, data.split(Split.TRAIN), plan.trainer)
    return model, tr


def train_separate(plan: RunPlan, data: SampleSet) -> dict[str, tuple[FlexModel, TrainResult]]:
    """One model per protocol, trained on that protocol's modality subset only."""
    out: dict[str, tuple[FlexModel, TrainResult]] = {}
    for idx, p in enumerate(plan.protocols):
        masked = [
            mask_modalities(s, set(p.eval_modalities))
            for s in data.split(Split.TRAIN)
        ]
        model = build_model(plan.model, seed=plan.trainer.seed + idx)
        tr = train(model, masked, plan.trainer)
        out[p.id] = (model, tr)
    return out


def run_unified(plan: RunPlan, data: SampleSet) -> RunResult:
    if plan.mode is not RunMode.UNIFIED:
        raise FlexFasError("VALUE_RANGE", "plan mode must be UNIFIED")
    model, tr = train_unified(plan, data)
    result = evaluate_protocols(model, list(plan.protocols), data)
    result.models["unified"] = model
    result.train_results["unified"] = tr
    return result


def run_separate(plan: RunPlan, data: SampleSet) -> RunResult:
    if plan.mode is not RunMode.SEPARATE:
        raise FlexFasError("VALUE_RANGE", "plan mode must be SEPARATE")
    trained = train_separate(plan, data)
    result = RunResult()
    for p in plan.protocols:
        model, tr = trained[p.id]
        sub = evaluate_protocols(model, [p], data)
        result.reports.update(sub.reports)
        result.cross_reports.update(sub.cross_reports)
        result.scores.update(sub.scores)
        result.models[p.id] = model
        result.train_results[p.id] = tr
    return result
