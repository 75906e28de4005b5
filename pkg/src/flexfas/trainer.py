"""Optimization loop and checkpoint container for FlexModel training.

Determinism contract: identical (seed, config, data) gives identical final
parameters in single-worker mode. Batch order is drawn once from the seed and
kept fixed across epochs, so a zero learning rate leaves both the parameters
and the loss trace exactly constant.
"""
from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import torch

from .augment import DropModalConfig, drop_modal
from .backbones import FlexModel, ModelConfig, batch_loss, build_model
from .core import FlexFasError, Label, MODALITIES, ModalitySample

CHECKPOINT_VERSION = 1


class OptimizerKind(Enum):
    ADAM = "adam"
    ADAMW = "adamw"


@dataclass(frozen=True)
class TrainConfig:
    optimizer: OptimizerKind = OptimizerKind.ADAM
    learning_rate: float = 1e-3
    epochs: int = 25
    lr_halving_epoch: int = 17
    batch_size: int = 32
    seed: int = 0
    dropmodal: DropModalConfig | None = None
    grad_clip_norm: float | None = None

    def __post_init__(self):
        if self.epochs < 1:
            raise FlexFasError("VALUE_RANGE", "epochs must be >= 1")
        if not 1 <= self.lr_halving_epoch <= self.epochs:
            raise FlexFasError("VALUE_RANGE", "lr_halving_epoch must be in [1, epochs]")
        if self.learning_rate < 0:
            raise FlexFasError("VALUE_RANGE", "learning_rate must be >= 0")
        if self.batch_size < 1:
            raise FlexFasError("VALUE_RANGE", "batch_size must be >= 1")


@dataclass
class TrainResult:
    loss_trace: list[float] = field(default_factory=list)  # per-epoch mean loss
    lr_trace: list[float] = field(default_factory=list)  # lr in effect per epoch


def _make_optimizer(model: FlexModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    if cfg.optimizer is OptimizerKind.ADAMW:
        return torch.optim.AdamW(model.parameters(), lr=cfg.learning_rate)
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)


def train(
    model: FlexModel, samples: list[ModalitySample], cfg: TrainConfig
) -> TrainResult:
    """Minibatch training on `samples`; mutates `model`, returns the loss trace.

    The learning rate is multiplied by 0.5 once, in effect from epoch
    `lr_halving_epoch` (1-based) onward. DropModal, when configured, redraws
    per sample per epoch from its own seeded stream.
    """
    labels = {s.label for s in samples}
    if labels != {Label.BONAFIDE, Label.ATTACK}:
        raise FlexFasError("ONE_CLASS_ONLY", "training split needs both classes")

    order = np.random.default_rng(cfg.seed).permutation(len(samples))
    batches = [
        [samples[i] for i in order[start : start + cfg.batch_size]]
        for start in range(0, len(samples), cfg.batch_size)
    ]
    drop_rng = (
        np.random.default_rng(cfg.dropmodal.seed) if cfg.dropmodal is not None else None
    )
    optimizer = _make_optimizer(model, cfg)
    active = set(MODALITIES)
    result = TrainResult()

    model.train()
    for epoch in range(1, cfg.epochs + 1):
        lr = cfg.learning_rate * (0.5 if epoch >= cfg.lr_halving_epoch else 1.0)
        for group in optimizer.param_groups:
            group["lr"] = lr
        epoch_losses = []
        for batch_idx, batch in enumerate(batches):
            if drop_rng is not None:
                batch = [drop_modal(s, cfg.dropmodal, drop_rng) for s in batch]
            loss = batch_loss(model, batch, active)
            if not torch.isfinite(loss):
                raise FlexFasError(
                    "NONFINITE_LOSS", f"epoch {epoch} batch {batch_idx}: loss {loss}"
                )
            optimizer.zero_grad()
            loss.backward()
            if cfg.grad_clip_norm is not None:
                torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
            optimizer.step()
            epoch_losses.append(float(loss.detach()))
        result.loss_trace.append(float(np.mean(epoch_losses)))
        result.lr_trace.append(lr)
    model.eval()
    return result


# --- checkpoint container ------------------------------------------------------


def save_checkpoint(path, model: FlexModel, config_echo: dict | None = None) -> None:
    """Versioned checkpoint: model config, named parameter arrays, rng state.

    Written atomically (temp file + rename).
    """
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": model.cfg.to_dict(),
        "state_dict": model.state_dict(),
        "torch_rng_state": torch.get_rng_state(),
        "config_echo": config_echo or {},
    }
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            torch.save(payload, f)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path) -> tuple[FlexModel, dict]:
    """Rebuild the model from a checkpoint; raises CHECKPOINT_INCOMPATIBLE."""
    if not os.path.exists(path):
        raise FlexFasError("FILE_NOT_FOUND", f"checkpoint {path} does not exist")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("format_version") != CHECKPOINT_VERSION:
        raise FlexFasError(
            "CHECKPOINT_INCOMPATIBLE",
            f"unsupported checkpoint format in {path}",
        )
    try:
        model = build_model(ModelConfig.from_dict(payload["model_config"]))
        model.load_state_dict(payload["state_dict"])
    except (KeyError, ValueError, RuntimeError) as e:
        raise FlexFasError("CHECKPOINT_INCOMPATIBLE", str(e)) from e
    model.eval()
    return model, payload
