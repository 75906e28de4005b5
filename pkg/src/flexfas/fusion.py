"""Feature-level fusion of per-modality maps into one fused map.

Three operators, all ending in the same 1x1-conv + batch-norm + ReLU
aggregation:
  * concat fusion: channel-wise concatenation of the three maps;
  * SE fusion: per-modality squeeze-and-excitation channel gates before
    concatenation;
  * cross-attention fusion: depth and IR maps attend over RGB positions
    (plain row-softmax of the Gram matrix, no temperature or 1/sqrt(d)
    scaling), the attended maps are summed residually with RGB.

Gradients come from autograd; there is no hand-written backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import torch
import torch.nn as nn
import torch.nn.functional as F

from .core import FeatureBundle, FlexFasError, Modality, MODALITIES


class FusionKind(Enum):
    CONCAT = "concat"
    SE = "se"
    CROSS_ATTENTION = "cross_attention"


@dataclass(frozen=True)
class FusionConfig:
    kind: FusionKind = FusionKind.CONCAT
    in_channels: int = 32
    out_channels: int | None = None  # defaults to in_channels
    se_reduction: int = 8

    def __post_init__(self):
        if self.in_channels < 1 or (self.out_channels or 1) < 1:
            raise FlexFasError("VALUE_RANGE", "channel counts must be >= 1")
        if self.se_reduction < 1:
            raise FlexFasError("VALUE_RANGE", "se_reduction must be >= 1")

    @property
    def resolved_out_channels(self) -> int:
        return self.out_channels if self.out_channels is not None else self.in_channels


class _Aggregate(nn.Module):
    """Shared tail: 1x1 conv -> batch norm -> ReLU."""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__()
        self.conv = nn.Conv2d(in_channels, out_channels, kernel_size=1)
        self.bn = nn.BatchNorm2d(out_channels)

    def forward(self, x):
        return F.relu(self.bn(self.conv(x)))


class ConcatFusion(nn.Module):
    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.aggregate = _Aggregate(3 * cfg.in_channels, cfg.resolved_out_channels)

    def forward(self, bundle: FeatureBundle) -> torch.Tensor:
        x = torch.cat([bundle.features[m] for m in MODALITIES], dim=1)
        return self.aggregate(x)


class SEGate(nn.Module):
    """Channel gate: sigmoid(FC2(ReLU(FC1(global-avg-pool(x)))))."""

    def __init__(self, channels: int, reduction: int):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Linear(channels, hidden)
        self.fc2 = nn.Linear(hidden, channels)

    def forward(self, x):
        pooled = x.mean(dim=(2, 3))
        gate = torch.sigmoid(self.fc2(F.relu(self.fc1(pooled))))
        return gate[:, :, None, None]


class SEFusion(nn.Module):
    """One SE gate per modality branch, then the concat aggregation."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.gates = nn.ModuleDict(
            {m.value: SEGate(cfg.in_channels, cfg.se_reduction) for m in MODALITIES}
        )
        self.aggregate = _Aggregate(3 * cfg.in_channels, cfg.resolved_out_channels)

    def gated_features(self, bundle: FeatureBundle) -> dict[Modality, torch.Tensor]:
        return {
            m: bundle.features[m] * self.gates[m.value](bundle.features[m])
            for m in MODALITIES
        }

    def forward(self, bundle: FeatureBundle) -> torch.Tensor:
        gated = self.gated_features(bundle)
        return self.aggregate(torch.cat([gated[m] for m in MODALITIES], dim=1))


class CrossAttentionFusion(nn.Module):
    """Depth/IR queries attend over RGB positions; attended maps add to RGB."""

    def __init__(self, cfg: FusionConfig):
        super().__init__()
        self.cfg = cfg
        self.aggregate = _Aggregate(cfg.in_channels, cfg.resolved_out_channels)

    @staticmethod
    def attention(query_map: torch.Tensor, rgb_map: torch.Tensor):
        """Row-softmax(Q_vec @ RGB_vec^T) and the attended map, both batched.

        Maps are [B, C, H, W]; vectorized form is [B, N=H*W, C]. No scaling
        inside the softmax.
        """
        b, c, h, w = rgb_map.shape
        rgb_vec = rgb_map.flatten(2).transpose(1, 2)
        q_vec = query_map.flatten(2).transpose(1, 2)
        att = torch.softmax(torch.bmm(q_vec, rgb_vec.transpose(1, 2)), dim=-1)
        attended = torch.bmm(att, rgb_vec).transpose(1, 2).reshape(b, c, h, w)
        return att, attended

    def pre_aggregate(self, bundle: FeatureBundle) -> torch.Tensor:
        rgb = bundle.features[Modality.RGB]
        _, ca_depth = self.attention(bundle.features[Modality.DEPTH], rgb)
        _, ca_ir = self.attention(bundle.features[Modality.IR], rgb)
        return rgb + ca_depth + ca_ir

    def forward(self, bundle: FeatureBundle) -> torch.Tensor:
        return self.aggregate(self.pre_aggregate(bundle))


def build_fusion(cfg: FusionConfig) -> nn.Module:
    if cfg.kind is FusionKind.CONCAT:
        return ConcatFusion(cfg)
    if cfg.kind is FusionKind.SE:
        return SEFusion(cfg)
    return CrossAttentionFusion(cfg)
