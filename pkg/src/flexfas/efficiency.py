"""Parameter and FLOPs accounting for FlexModel configurations.

Conventions (documented in every CostReport):
  * FLOPs = 2 x multiply-accumulates for conv / linear / attention products;
  * a bias adds 1 FLOP per output element;
  * normalization (batch norm folded for inference, layer norm) costs
    2 FLOPs per element (scale + shift);
  * ReLU / sigmoid / softmax exponentials / residual adds / pooling adds
    cost 1 FLOP per element.

Parameter counts are structural (independent of values); FLOPs are counted
for one forward pass of the full tri-modal graph, so they do not depend on
whether branches share weights.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .backbones import (
    FlexModel,
    LogitHead,
    MapHead,
    ResidualBlock,
    ToyCnn,
    ToyResNet,
    ToyViT,
)
from .core import FlexFasError
from .fusion import ConcatFusion, CrossAttentionFusion, SEFusion

FLOPS_CONVENTION = "2*MACs; bias/elementwise 1 FLOP per element; norms 2 per element"


@dataclass(frozen=True)
class CostReport:
    params: int = 0
    flops: int = 0
    breakdown: dict[str, tuple[int, int]] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "params": self.params,
            "flops": self.flops,
            "breakdown": {k: {"params": p, "flops": f} for k, (p, f) in self.breakdown.items()},
            "flops_convention": FLOPS_CONVENTION,
        }


def count_params(model: FlexModel) -> CostReport:
    """Exact count of learnable scalars, per submodule and total."""
    groups = {"branch": 0, "fusion": 0, "head": 0}
    for name, p in model.named_parameters():
        if not p.requires_grad:
            continue
        top = name.split(".", 1)[0]
        key = "branch" if top in ("encoder", "encoders") else top
        groups[key] += p.numel()
    breakdown = {k: (v, 0) for k, v in groups.items()}
    return CostReport(params=sum(groups.values()), breakdown=breakdown)


# --- per-layer FLOPs helpers -------------------------------------------------


def conv2d_flops(cin, cout, kernel, hw, stride=1, padding=0, bias=True):
    """Returns (flops, out_hw) for a 2d convolution."""
    h, w = hw
    oh = (h + 2 * padding - kernel) // stride + 1
    ow = (w + 2 * padding - kernel) // stride + 1
    if oh < 1 or ow < 1:
        raise FlexFasError("SHAPE_INVALID", f"conv collapses {hw} to {(oh, ow)}")
    macs = cout * oh * ow * cin * kernel * kernel
    return 2 * macs + (cout * oh * ow if bias else 0), (oh, ow)


def linear_flops(cin, cout, n_rows=1, bias=True):
    return n_rows * (2 * cin * cout + (cout if bias else 0))


def attention_product_flops(n_tokens, dim):
    """One [n, d] x [d, n] (or [n, n] x [n, d]) product: n^2 * d MACs."""
    return 2 * n_tokens * n_tokens * dim


def _norm_flops(n_elements):
    return 2 * n_elements


def _conv_block_flops(cin, cout, hw, stride):
    f, out_hw = conv2d_flops(cin, cout, 3, hw, stride=stride, padding=1, bias=False)
    n = cout * out_hw[0] * out_hw[1]
    return f + _norm_flops(n) + n, out_hw


# --- encoder / fusion / head walks -------------------------------------------


def _encoder_flops(encoder, hw) -> tuple[int, tuple[int, int]]:
    if isinstance(encoder, ToyCnn):
        total = 0
        chans = [3] + [b[0].out_channels for b in encoder.blocks]
        for cin, cout in zip(chans[:-1], chans[1:]):
            f, hw = _conv_block_flops(cin, cout, hw, stride=2)
            total += f
        return total, hw

    if isinstance(encoder, ToyResNet):
        stem_out = encoder.stem[0].out_channels
        total, hw = _conv_block_flops(3, stem_out, hw, stride=2)
        for block in (encoder.block1, encoder.block2):
            f, hw = _residual_block_flops(block, hw)
            total += f
        return total, hw

    if isinstance(encoder, ToyViT):
        return _vit_flops(encoder, hw)
    raise FlexFasError("SHAPE_INVALID", f"unknown encoder {type(encoder).__name__}")


def _residual_block_flops(block: ResidualBlock, hw) -> tuple[int, tuple[int, int]]:
    cin, cout = block.conv1.in_channels, block.conv1.out_channels
    stride = block.conv1.stride[0]
    f1, out_hw = conv2d_flops(cin, cout, 3, hw, stride=stride, padding=1, bias=False)
    n = cout * out_hw[0] * out_hw[1]
    f2, _ = conv2d_flops(cout, cout, 3, out_hw, stride=1, padding=1, bias=False)
    fskip, _ = conv2d_flops(cin, cout, 1, hw, stride=stride, bias=False)
    # conv1+bn+relu, conv2+bn, skip conv+bn, residual add, final relu
    total = f1 + _norm_flops(n) + n + f2 + _norm_flops(n) + fskip + _norm_flops(n) + n + n
    return total, out_hw


def _vit_flops(encoder: ToyViT, hw) -> tuple[int, tuple[int, int]]:
    patch = encoder.patch_embed.kernel_size[0]
    dim = encoder.patch_embed.out_channels
    if hw[0] % patch or hw[1] % patch:
        raise FlexFasError("SHAPE_INVALID", f"{hw} not divisible by patch {patch}")
    grid = (hw[0] // patch, hw[1] // patch)
    n = grid[0] * grid[1]
    total, _ = conv2d_flops(3, dim, patch, hw, stride=patch, bias=True)
    total += n * dim  # positional embedding add
    for _block in encoder.blocks:
        attn = 4 * linear_flops(dim, dim, n_rows=n)  # q, k, v, out projections
        attn += attention_product_flops(n, dim) + n * n  # Q K^T and its 1/sqrt(d) scaling
        attn += n * n  # softmax exponentials
        attn += attention_product_flops(n, dim)  # attention x V
        mlp = linear_flops(dim, 4 * dim, n_rows=n) + 4 * n * dim  # fc1 + relu
        mlp += linear_flops(4 * dim, dim, n_rows=n)  # fc2
        total += attn + mlp + 2 * _norm_flops(n * dim) + 2 * n * dim  # norms + residuals
    total += _norm_flops(n * dim)
    return total, grid


def _aggregate_flops(cin, cout, hw):
    f, _ = conv2d_flops(cin, cout, 1, hw, bias=True)
    n = cout * hw[0] * hw[1]
    return f + _norm_flops(n) + n


def _fusion_flops(fusion, c, hw) -> int:
    n_pix = hw[0] * hw[1]
    out = fusion.cfg.resolved_out_channels
    if isinstance(fusion, ConcatFusion):
        return _aggregate_flops(3 * c, out, hw)
    if isinstance(fusion, SEFusion):
        hidden = fusion.gates["rgb"].fc1.out_features
        per_modality = (
            c * n_pix  # global average pool adds
            + linear_flops(c, hidden)
            + hidden  # relu
            + linear_flops(hidden, c)
            + c  # sigmoid
            + c * n_pix  # gate multiply
        )
        return 3 * per_modality + _aggregate_flops(3 * c, out, hw)
    if isinstance(fusion, CrossAttentionFusion):
        # Gram product, softmax exponentials, attention x RGB; twice (depth, IR)
        per_query = 2 * attention_product_flops(n_pix, c) + n_pix * n_pix
        residual_adds = 2 * c * n_pix
        return 2 * per_query + residual_adds + _aggregate_flops(c, out, hw)
    raise FlexFasError("SHAPE_INVALID", f"unknown fusion {type(fusion).__name__}")


def _head_flops(head, c, hw) -> int:
    if isinstance(head, LogitHead):
        return c * hw[0] * hw[1] + linear_flops(c, 1)
    if isinstance(head, MapHead):
        f, _ = conv2d_flops(c, 1, 1, hw, bias=True)
        return f
    raise FlexFasError("SHAPE_INVALID", f"unknown head {type(head).__name__}")


def count_flops(model: FlexModel, input_hw: tuple[int, int] | None = None) -> CostReport:
    """FLOPs for one forward pass at the given input size (default: config size).

    All three branches are counted (the graph is fixed tri-modal), so shared
    and unshared variants of one architecture cost the same.
    """
    hw = tuple(input_hw) if input_hw is not None else model.cfg.image_size
    encoder = model.encoder if model.cfg.shared else model.encoders["rgb"]
    per_branch, feat_hw = _encoder_flops(encoder, hw)
    c = model.cfg.feature_channels
    branch = 3 * per_branch
    fusion = _fusion_flops(model.fusion, c, feat_hw)
    head = _head_flops(model.head, c, feat_hw)
    breakdown = {"branch": (0, branch), "fusion": (0, fusion), "head": (0, head)}
    return CostReport(flops=branch + fusion + head, breakdown=breakdown)


def cost_report(model: FlexModel, input_hw: tuple[int, int] | None = None) -> CostReport:
    """Combined params + FLOPs report with a per-module breakdown."""
    p = count_params(model)
    f = count_flops(model, input_hw)
    breakdown = {
        k: (p.breakdown[k][0], f.breakdown[k][1]) for k in ("branch", "fusion", "head")
    }
    return CostReport(params=p.params, flops=f.flops, breakdown=breakdown)
