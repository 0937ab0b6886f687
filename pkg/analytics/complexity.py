"""
Closed-form attention complexity as stated for SRA and linear SRA, and a
per-stage comparison against the counted MACs.

The SRA expression's second term is hwc^2 R^2, while the reduction conv
actually costs (hw/R^2) * R^2 c * c = hwc^2. Both numbers are reported.
"""
from dataclasses import dataclass
from fractions import Fraction

from analytics.cost import cost_report
from attention.attention import SRA
from backbone.blocks import patch_embed_params
from backbone.model import IN_CHANNELS


def _exact(value):
    value = Fraction(value)
    return int(value) if value.denominator == 1 else float(value)


def sra_complexity(h, w, c, reduction_ratio):
    """2 h^2 w^2 c / R^2 + h w c^2 R^2, evaluated as written."""
    r = reduction_ratio
    return _exact(Fraction(2 * h * h * w * w * c, r * r) + h * w * c * c * r * r)


def sra_attention_term(h, w, c, reduction_ratio):
    """First term only: the QK^T and AV products."""
    return _exact(Fraction(2 * h * h * w * w * c, reduction_ratio ** 2))


def linear_sra_complexity(h, w, c, pool_size):
    """2 h w P^2 c."""
    return 2 * h * w * pool_size * pool_size * c


@dataclass(frozen=True)
class StageEquation:
    stage: int
    h: int
    w: int
    channels: int
    attn: str
    equation: object           # closed-form value for one attention layer
    counted_core: int          # counted QK^T + AV MACs for one layer
    counted_reduction: int     # counted reduction conv MACs for one layer
    equation_reduction: object  # the closed form's reduction term (0 for linear SRA)

    @property
    def reduction_delta(self):
        return self.equation_reduction - self.counted_reduction


def equation_report(model, height, width=None):
    """
    Compare the closed forms with the counted cost of each stage's first block.

    Head count does not change the MACs, so the closed forms apply directly.

    Args:
        model: PyramidVisionTransformerV2 or ModelConfig
        height, width: Input size

    Returns:
        list: StageEquation per stage
    """
    width = height if width is None else width
    report = cost_report(model, height, width)
    config = getattr(model, "config", model)
    by_path = {layer.path: layer.macs for layer in report.per_layer}

    rows = []
    in_channels, h, w = IN_CHANNELS, height, width
    for i, stage in enumerate(config.stages):
        embed = patch_embed_params(in_channels, stage.channels, stage.stride, config.overlapping_patch_embed)
        h, w = embed.output_size(h, w)
        in_channels = c = stage.channels
        prefix = f"stages.{i}.blocks.0.attn"
        core = by_path[f"{prefix}.core"]
        reduction = by_path.get(f"{prefix}.sr", 0)
        if isinstance(stage.attn, SRA):
            r = stage.attn.reduction_ratio
            rows.append(StageEquation(i + 1, h, w, c, stage.attn.describe(), sra_complexity(h, w, c, r),
                                      core, reduction, h * w * c * c * r * r))
        else:
            p = stage.attn.pool_size
            rows.append(StageEquation(i + 1, h, w, c, stage.attn.describe(), linear_sra_complexity(h, w, c, p),
                                      core, reduction, 0))
    return rows


def format_equation_report(rows):
    lines = [f"{'stage':>5} {'h x w':>9} {'c':>4} {'attn':>9} {'closed form':>14} "
             f"{'counted core':>14} {'counted red.':>13} {'form red.':>13}"]
    for row in rows:
        lines.append(
            f"{row.stage:>5} {f'{row.h}x{row.w}':>9} {row.channels:>4} {row.attn:>9} {row.equation:>14,} "
            f"{row.counted_core:>14,} {row.counted_reduction:>13,} {row.equation_reduction:>13,}"
        )
    return "\n".join(lines)
