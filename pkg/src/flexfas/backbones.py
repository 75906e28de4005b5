"""Modality-branch encoders, prediction heads, and the assembled flexible-modal net.

Encoders are desk-scale stand-ins for the usual deep baselines: a plain
3-block CNN, a 2-block residual net, and a patchify + 2-layer transformer.
Branches can share one parameter set across modalities or hold one per
modality. Missing or inactive modalities enter the encoders as all-zero
arrays; single-channel depth/IR inputs are replicated to 3 channels.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import (
    FeatureBundle,
    FlexFasError,
    Label,
    MODALITIES,
    Modality,
    ModalitySample,
)
from .fusion import FusionConfig, FusionKind, build_fusion


class Arch(Enum):
    TOY_CNN = "toy_cnn"
    TOY_RESNET = "toy_resnet"
    TOY_VIT = "toy_vit"


class HeadKind(Enum):
    BINARY_LOGIT = "binary_logit"
    BINARY_MAP = "binary_map"


@dataclass(frozen=True)
class ModelConfig:
    arch: Arch = Arch.TOY_CNN
    shared: bool = True
    fusion: FusionKind = FusionKind.CONCAT
    head: HeadKind = HeadKind.BINARY_LOGIT
    feature_channels: int = 32
    se_reduction: int = 8
    image_size: tuple[int, int] = (32, 32)
    vit_patch_size: int = 8

    def __post_init__(self):
        if self.feature_channels < 1:
            raise FlexFasError("VALUE_RANGE", "feature_channels must be >= 1")
        h, w = self.image_size
        if self.arch is Arch.TOY_VIT and (h % self.vit_patch_size or w % self.vit_patch_size):
            raise FlexFasError(
                "SHAPE_INVALID",
                f"image size {self.image_size} not divisible by patch {self.vit_patch_size}",
            )

    def to_dict(self) -> dict:
        return {
            "arch": self.arch.value,
            "shared": self.shared,
            "fusion": self.fusion.value,
            "head": self.head.value,
            "feature_channels": self.feature_channels,
            "se_reduction": self.se_reduction,
            "image_size": list(self.image_size),
            "vit_patch_size": self.vit_patch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            arch=Arch(d.get("arch", "toy_cnn")),
            shared=bool(d.get("shared", True)),
            fusion=FusionKind(d.get("fusion", "concat")),
            head=HeadKind(d.get("head", "binary_logit")),
            feature_channels=int(d.get("feature_channels", 32)),
            se_reduction=int(d.get("se_reduction", 8)),
            image_size=tuple(d.get("image_size", (32, 32))),
            vit_patch_size=int(d.get("vit_patch_size", 8)),
        )


def _norm(channels: int) -> nn.Module:
    # Group norm, not batch norm: modality dropping feeds the encoders a
    # mixture of zero and real inputs, which poisons batch-norm running
    # statistics at inference; group norm is batch-independent so training
    # drops and eval-time masking see identical normalization.
    return nn.GroupNorm(4 if channels % 4 == 0 else 1, channels)


def _conv_block(cin, cout, stride):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
        _norm(cout),
        nn.ReLU(),
    )


class ToyCnn(nn.Module):
    """3 stride-2 conv blocks: H,W shrink by 8."""

    def __init__(self, feature_channels: int):
        super().__init__()
        mid = max(feature_channels // 2, 4)
        self.blocks = nn.Sequential(
            _conv_block(3, mid, 2),
            _conv_block(mid, mid, 2),
            _conv_block(mid, feature_channels, 2),
        )

    def forward(self, x):
        return self.blocks(x)


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride):
        super().__init__()
        self.conv1 = nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _norm(cout)
        self.conv2 = nn.Conv2d(cout, cout, 3, padding=1, bias=False)
        self.norm2 = _norm(cout)
        self.skip = nn.Sequential(
            nn.Conv2d(cin, cout, 1, stride=stride, bias=False), _norm(cout)
        )

    def forward(self, x):
        out = F.relu(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return F.relu(out + self.skip(x))


class ToyResNet(nn.Module):
    """Stride-2 stem + 2 stride-2 residual blocks: H,W shrink by 8."""

    def __init__(self, feature_channels: int):
        super().__init__()
        mid = max(feature_channels // 2, 4)
        self.stem = _conv_block(3, mid, 2)
        self.block1 = ResidualBlock(mid, mid, 2)
        self.block2 = ResidualBlock(mid, feature_channels, 2)

    def forward(self, x):
        return self.block2(self.block1(self.stem(x)))


class SelfAttention(nn.Module):
    """Single-head self-attention with 1/sqrt(d) scaling over tokens [B, N, D]."""

    def __init__(self, dim: int):
        super().__init__()
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.scale = dim ** -0.5

    def forward(self, x):
        att = torch.softmax(
            torch.bmm(self.q(x), self.k(x).transpose(1, 2)) * self.scale, dim=-1
        )
        return self.out(torch.bmm(att, self.v(x)))


class TransformerBlock(nn.Module):
    def __init__(self, dim: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = SelfAttention(dim)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = nn.Sequential(
            nn.Linear(dim, mlp_ratio * dim), nn.ReLU(), nn.Linear(mlp_ratio * dim, dim)
        )

    def forward(self, x):
        x = x + self.attn(self.norm1(x))
        return x + self.mlp(self.norm2(x))


class ToyViT(nn.Module):
    """Patchify + 2 transformer layers; tokens reshape back to the patch grid."""

    def __init__(self, feature_channels: int, image_size: tuple[int, int], patch: int):
        super().__init__()
        h, w = image_size
        self.grid = (h // patch, w // patch)
        n_tokens = self.grid[0] * self.grid[1]
        self.patch_embed = nn.Conv2d(3, feature_channels, patch, stride=patch)
        self.pos_embed = nn.Parameter(torch.zeros(1, n_tokens, feature_channels))
        self.blocks = nn.Sequential(
            TransformerBlock(feature_channels), TransformerBlock(feature_channels)
        )
        self.norm = nn.LayerNorm(feature_channels)

    def forward(self, x):
        b = x.shape[0]
        tokens = self.patch_embed(x).flatten(2).transpose(1, 2) + self.pos_embed
        tokens = self.norm(self.blocks(tokens))
        gh, gw = self.grid
        return tokens.transpose(1, 2).reshape(b, -1, gh, gw)


class LogitHead(nn.Module):
    """Global average pool + linear to one logit. Output layer starts at zero."""

    def __init__(self, channels: int):
        super().__init__()
        self.fc = nn.Linear(channels, 1)
        nn.init.zeros_(self.fc.weight)
        nn.init.zeros_(self.fc.bias)

    def forward(self, fused):
        return self.fc(fused.mean(dim=(2, 3))).squeeze(-1)


class MapHead(nn.Module):
    """1x1 conv to a single-channel logit map. Output layer starts at zero."""

    def __init__(self, channels: int):
        super().__init__()
        self.conv = nn.Conv2d(channels, 1, 1)
        nn.init.zeros_(self.conv.weight)
        nn.init.zeros_(self.conv.bias)

    def forward(self, fused):
        return self.conv(fused)


def _build_encoder(cfg: ModelConfig) -> nn.Module:
    if cfg.arch is Arch.TOY_CNN:
        return ToyCnn(cfg.feature_channels)
    if cfg.arch is Arch.TOY_RESNET:
        return ToyResNet(cfg.feature_channels)
    return ToyViT(cfg.feature_channels, cfg.image_size, cfg.vit_patch_size)


class FlexModel(nn.Module):
    """Tri-branch encoder + fusion + head, deployable under any modality subset.

    The computation graph is always tri-modal; inactive or absent modalities
    are fed as zeros, so evaluation cost does not depend on the active set.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        if cfg.shared:
            self.encoder = _build_encoder(cfg)
        else:
            self.encoders = nn.ModuleDict(
                {m.value: _build_encoder(cfg) for m in MODALITIES}
            )
        self.fusion = build_fusion(
            FusionConfig(
                kind=cfg.fusion,
                in_channels=cfg.feature_channels,
                se_reduction=cfg.se_reduction,
            )
        )
        if cfg.head is HeadKind.BINARY_LOGIT:
            self.head = LogitHead(cfg.feature_channels)
        else:
            self.head = MapHead(cfg.feature_channels)

    def branch(self, m: Modality) -> nn.Module:
        return self.encoder if self.cfg.shared else self.encoders[m.value]

    def encode_inputs(self, inputs: dict[Modality, torch.Tensor]) -> FeatureBundle:
        feats = {}
        for m in MODALITIES:
            x = inputs[m]
            if x.shape[1] == 1:
                x = x.expand(-1, 3, -1, -1)
            feats[m] = self.branch(m)(x)
        return FeatureBundle(feats)

    def forward(self, inputs: dict[Modality, torch.Tensor]) -> torch.Tensor:
        return self.head(self.fusion(self.encode_inputs(inputs)))

    # --- sample-level API -------------------------------------------------

    def _param_dtype(self) -> torch.dtype:
        return next(self.parameters()).dtype

    def inputs_from_samples(
        self, samples: list[ModalitySample], active: set[Modality]
    ) -> dict[Modality, torch.Tensor]:
        """Stack samples into per-modality batches, zero-masking by `active`.

        A modality outside `active`, or absent from a sample, contributes an
        all-zero array of matching spatial size.
        """
        if Modality.RGB not in active:
            raise FlexFasError("MISSING_RGB", "active set must contain RGB")
        dtype = self._param_dtype()
        batches: dict[Modality, torch.Tensor] = {}
        for m in MODALITIES:
            planes = []
            for s in samples:
                h, w = s.height_width
                if m in active and m in s.images:
                    planes.append(np.ascontiguousarray(s.images[m], dtype=np.float64))
                else:
                    channels = s.images[m].shape[0] if m in s.images else (3 if m is Modality.RGB else 1)
                    planes.append(np.zeros((channels, h, w)))
            batches[m] = torch.as_tensor(np.stack(planes)).to(dtype)
        return batches

    def encode_sample(self, s: ModalitySample, active: set[Modality]) -> FeatureBundle:
        return self.encode_inputs(self.inputs_from_samples([s], active))

    def predict_batch(
        self, samples: list[ModalitySample], active: set[Modality]
    ) -> np.ndarray:
        """Scores in [0, 1] for a batch of samples, inference mode."""
        was_training = self.training
        self.eval()
        try:
            with torch.no_grad():
                out = self.forward(self.inputs_from_samples(samples, active))
                scores = output_scores(out, self.cfg.head)
        finally:
            self.train(was_training)
        return scores.numpy()

    def predict_sample(self, s: ModalitySample, active: set[Modality]) -> float:
        return float(self.predict_batch([s], active)[0])


def output_scores(output: torch.Tensor, head: HeadKind) -> torch.Tensor:
    """Head output -> scalar score per sample: sigmoid(logit) or mean sigmoid(map)."""
    if head is HeadKind.BINARY_LOGIT:
        return torch.sigmoid(output)
    return torch.sigmoid(output).mean(dim=(1, 2, 3))


def batch_loss(
    model: FlexModel, samples: list[ModalitySample], active: set[Modality]
) -> torch.Tensor:
    """Mean binary cross-entropy of a batch (per-pixel for the map head).

    Targets: bonafide -> 1, attack -> 0; the map head is supervised with
    constant all-ones / all-zeros maps.
    """
    if not samples:
        raise FlexFasError("EMPTY_BATCH", "loss needs a nonempty batch")
    output = model.forward(model.inputs_from_samples(samples, active))
    targets = torch.tensor(
        [1.0 if s.label is Label.BONAFIDE else 0.0 for s in samples],
        dtype=output.dtype,
    )
    if model.cfg.head is HeadKind.BINARY_MAP:
        targets = targets[:, None, None, None].expand_as(output)
    return F.binary_cross_entropy_with_logits(output, targets)


def build_model(cfg: ModelConfig, seed: int | None = None) -> FlexModel:
    """Construct a FlexModel; a seed pins the parameter initialization."""
    if seed is not None:
        torch.manual_seed(seed)
    return FlexModel(cfg)
