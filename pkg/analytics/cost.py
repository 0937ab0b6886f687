"""
Analytic cost model: exact parameter counts and per-layer multiply-accumulate
counts at a given input size.

One MAC is reported as one FLOP. Norms, activations, softmax, pooling, bias
adds and residual adds are not counted.
"""
import csv
import io
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, NamedTuple, Tuple

from attention.attention import SRA
from backbone.blocks import patch_embed_params
from backbone.model import IN_CHANNELS, PyramidVisionTransformerV2, parameter_specs
from layers.conv import Conv2dParams
from utils.errors import InvalidShapeError


@dataclass(frozen=True)
class LayerCost:
    path: str
    params: int
    macs: int


@dataclass
class CostReport:
    """Per-layer costs for one model at one input size."""
    per_layer: List[LayerCost]
    input_size: Tuple[int, int]
    variant_name: str = "custom"
    total_params: int = field(init=False)
    total_macs: int = field(init=False)

    def __post_init__(self):
        self.total_params = sum(layer.params for layer in self.per_layer)
        self.total_macs = sum(layer.macs for layer in self.per_layer)

    def macs_for(self, suffix):
        """Sum of MACs over layers whose path ends with `suffix`."""
        return sum(layer.macs for layer in self.per_layer if layer.path.endswith(suffix))

    @property
    def attention_core_macs(self):
        return self.macs_for("attn.core")

    def to_text(self):
        """Aligned plain-text table with a TOTAL row."""
        rows = [(layer.path, f"{layer.params:,}", f"{layer.macs:,}") for layer in self.per_layer]
        rows.append(("TOTAL", f"{self.total_params:,}", f"{self.total_macs:,}"))
        width = max(len("layer"), *(len(r[0]) for r in rows))
        p_width = max(len("params"), *(len(r[1]) for r in rows))
        m_width = max(len("macs"), *(len(r[2]) for r in rows))
        h, w = self.input_size
        lines = [
            f"Cost report: {self.variant_name} @ {h}x{w}",
            f"{'layer':<{width}}  {'params':>{p_width}}  {'macs':>{m_width}}",
            "-" * (width + p_width + m_width + 4),
        ]
        for name, params, macs in rows:
            if name == "TOTAL":
                lines.append("-" * (width + p_width + m_width + 4))
            lines.append(f"{name:<{width}}  {params:>{p_width}}  {macs:>{m_width}}")
        lines.append(f"Params: {self.total_params / 1e6:.2f} M | GFLOPs (MACs): {self.total_macs / 1e9:.2f}")
        return "\n".join(lines)

    def to_csv(self):
        """CSV text: header layer,params,macs then one row per layer and a TOTAL row."""
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(["layer", "params", "macs"])
        for layer in self.per_layer:
            writer.writerow([layer.path, layer.params, layer.macs])
        writer.writerow(["TOTAL", self.total_params, self.total_macs])
        return buffer.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


def _config_of(model):
    return model.config if isinstance(model, PyramidVisionTransformerV2) else model


def _block_macs(prefix, stage, config, h, w):
    """(layer path, macs) for one encoder block on an h x w map."""
    c, hidden = stage.channels, stage.hidden_channels
    t = h * w
    plan = [(f"{prefix}.norm1", 0)]
    attn = stage.attn
    if isinstance(attn, SRA):
        r = attn.reduction_ratio
        if r > 1:
            if h % r or w % r:
                raise InvalidShapeError(f"{prefix}: feature map {h}x{w} is not divisible by reduction ratio {r}")
            kv_tokens = (h // r) * (w // r)
            plan += [(f"{prefix}.attn.sr", Conv2dParams(c, c, kernel=r, stride=r).macs(h, w)),
                     (f"{prefix}.attn.norm", 0)]
        else:
            kv_tokens = t
    else:
        kv_tokens = attn.pool_size ** 2
        if config.linear_sra_refine:
            plan += [(f"{prefix}.attn.sr", kv_tokens * c * c), (f"{prefix}.attn.norm", 0)]
    plan += [
        (f"{prefix}.attn.q", t * c * c),
        (f"{prefix}.attn.k", kv_tokens * c * c),
        (f"{prefix}.attn.v", kv_tokens * c * c),
        (f"{prefix}.attn.core", 2 * t * kv_tokens * c),
        (f"{prefix}.attn.proj", t * c * c),
        (f"{prefix}.norm2", 0),
        (f"{prefix}.mlp.fc1", t * c * hidden),
    ]
    if config.conv_ffn:
        plan.append((f"{prefix}.mlp.dwconv", t * 9 * hidden))
    plan.append((f"{prefix}.mlp.fc2", t * hidden * c))
    return plan


def mac_plan(config, height, width):
    """Ordered (layer path, macs) for a single image of height x width."""
    plan = []
    in_channels, h, w = IN_CHANNELS, height, width
    for i, stage in enumerate(config.stages):
        prefix = f"stages.{i}"
        embed = patch_embed_params(in_channels, stage.channels, stage.stride, config.overlapping_patch_embed)
        plan.append((f"{prefix}.patch_embed.proj", embed.macs(h, w)))
        plan.append((f"{prefix}.patch_embed.norm", 0))
        h, w = embed.output_size(h, w)
        for j in range(stage.depth):
            plan += _block_macs(f"{prefix}.blocks.{j}", stage, config, h, w)
        plan.append((f"{prefix}.norm", 0))
        in_channels = stage.channels
    plan.append(("head", in_channels * config.num_classes))
    return plan


def cost_report(model, height, width=None):
    """
    Per-layer parameter and MAC counts.

    Args:
        model: PyramidVisionTransformerV2 or ModelConfig
        height: Input height
        width: Input width (defaults to height)

    Returns:
        CostReport
    """
    width = height if width is None else width
    config = _config_of(model)
    params = OrderedDict()
    for spec in parameter_specs(config):
        params[spec.layer] = params.get(spec.layer, 0) + spec.size
    per_layer = [LayerCost(path, params.pop(path, 0), macs) for path, macs in mac_plan(config, height, width)]
    if params:
        raise RuntimeError(f"layers without a cost entry: {list(params)}")
    return CostReport(per_layer, (height, width), config.variant_name)


def count_params(model):
    """
    Total parameter count, classification head included. Takes no input size.

    Args:
        model: PyramidVisionTransformerV2 or ModelConfig

    Returns:
        int
    """
    if isinstance(model, PyramidVisionTransformerV2):
        return model.num_parameters()
    return sum(spec.size for spec in parameter_specs(model))


def count_macs(model, height, width=None):
    """Total MACs for one image of height x width."""
    return cost_report(model, height, width).total_macs


class SweepRow(NamedTuple):
    size: Tuple[int, int]
    total_macs: int
    attention_core_macs: int


def sweep_macs(model, sizes):
    """
    MAC totals over a list of input sizes.

    Args:
        model: PyramidVisionTransformerV2 or ModelConfig
        sizes: Nonempty list of (H, W) pairs

    Returns:
        list: SweepRow per size, in the given order
    """
    if not sizes:
        raise ValueError("sweep needs at least one input size")
    rows = []
    for height, width in sizes:
        report = cost_report(model, height, width)
        rows.append(SweepRow((height, width), report.total_macs, report.attention_core_macs))
    return rows


def growth_factors(values):
    """Ratios between consecutive entries."""
    return [b / a for a, b in zip(values, values[1:])]
