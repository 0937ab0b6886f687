"""
Per-stage hyperparameters and the built-in B0-B5 / B2-Li grid.
"""
from dataclasses import dataclass, replace
from typing import Tuple

from attention.attention import SRA, AttentionKind, LinearSRA
from utils.config import DEFAULT_NUM_CLASSES, DEFAULT_POOL_SIZE
from utils.errors import InvalidConfigError, UnknownVariantError

MAX_STAGES = 4


@dataclass(frozen=True)
class StageConfig:
    """One stage: patch-embed stride S, channels C, depth L, attention (R or P), heads N, expansion E."""
    stride: int
    channels: int
    depth: int
    attn: AttentionKind
    heads: int
    mlp_ratio: int

    def __post_init__(self):
        if self.stride not in (2, 4):
            raise InvalidConfigError(f"patch-embed stride must be 2 or 4, got {self.stride}")
        for name in ("channels", "depth", "heads", "mlp_ratio"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.channels < self.heads or self.channels % self.heads:
            raise InvalidConfigError(f"{self.heads} heads do not divide {self.channels} channels")
        if not isinstance(self.attn, (SRA, LinearSRA)):
            raise InvalidConfigError(f"unknown attention kind {self.attn!r}")

    @property
    def hidden_channels(self):
        return self.channels * self.mlp_ratio


@dataclass(frozen=True)
class ModelConfig:
    """
    Whole-model configuration.

    overlapping_patch_embed, conv_ffn and the per-stage attention kinds are the
    three independent ablation switches; linear_sra_refine selects whether
    linear SRA applies a 1x1 conv + norm + GELU after pooling.
    """
    stages: Tuple[StageConfig, ...]
    num_classes: int = DEFAULT_NUM_CLASSES
    variant_name: str = "custom"
    overlapping_patch_embed: bool = True
    conv_ffn: bool = True
    linear_sra_refine: bool = True

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not 1 <= len(self.stages) <= MAX_STAGES:
            raise InvalidConfigError(f"a model has 1 to {MAX_STAGES} stages, got {len(self.stages)}")
        if self.stages[0].stride != 4 or any(s.stride != 2 for s in self.stages[1:]):
            raise InvalidConfigError("stage strides must be 4 then 2 for every later stage")
        channels = [s.channels for s in self.stages]
        if channels != sorted(channels):
            raise InvalidConfigError(f"channels must be nondecreasing across stages, got {channels}")
        if self.num_classes < 1:
            raise InvalidConfigError(f"num_classes must be >= 1, got {self.num_classes}")

    @property
    def output_strides(self):
        strides, total = [], 1
        for stage in self.stages:
            total *= stage.stride
            strides.append(total)
        return tuple(strides)

    def with_linear_sra(self, pool_size=DEFAULT_POOL_SIZE):
        stages = tuple(replace(s, attn=LinearSRA(pool_size)) for s in self.stages)
        return replace(self, stages=stages)


def _grid(name, channels, depths, ratios, heads, mlp_ratios, linear=False):
    stages = tuple(
        StageConfig(
            stride=4 if i == 0 else 2,
            channels=channels[i],
            depth=depths[i],
            attn=LinearSRA(DEFAULT_POOL_SIZE) if linear else SRA(ratios[i]),
            heads=heads[i],
            mlp_ratio=mlp_ratios[i],
        )
        for i in range(4)
    )
    return ModelConfig(stages=stages, variant_name=name)


_SMALL = (32, 64, 160, 256)
_WIDE = (64, 128, 320, 512)
_RATIOS = (8, 4, 2, 1)
_HEADS = (1, 2, 5, 8)

VARIANTS = {
    "B0": _grid("B0", _SMALL, (2, 2, 2, 2), _RATIOS, _HEADS, (8, 8, 4, 4)),
    "B1": _grid("B1", _WIDE, (2, 2, 2, 2), _RATIOS, _HEADS, (8, 8, 4, 4)),
    "B2": _grid("B2", _WIDE, (3, 3, 6, 3), _RATIOS, _HEADS, (8, 8, 4, 4)),
    "B2-Li": _grid("B2-Li", _WIDE, (3, 3, 6, 3), _RATIOS, _HEADS, (8, 8, 4, 4), linear=True),
    "B3": _grid("B3", _WIDE, (3, 3, 18, 3), _RATIOS, _HEADS, (8, 8, 4, 4)),
    "B4": _grid("B4", _WIDE, (3, 8, 27, 3), _RATIOS, _HEADS, (8, 8, 4, 4)),
    "B5": _grid("B5", _WIDE, (3, 6, 40, 3), _RATIOS, _HEADS, (4, 4, 4, 4)),
}


def config_for(variant):
    """
    Look up a built-in variant.

    Args:
        variant: One of B0, B1, B2, B2-Li, B3, B4, B5

    Returns:
        ModelConfig: The exact per-stage grid
    """
    try:
        return VARIANTS[variant]
    except KeyError:
        known = ", ".join(VARIANTS)
        raise UnknownVariantError(f"unknown variant {variant!r}; known variants: {known}") from None


def micro_config(num_classes=10):
    """Two-stage model small enough for exhaustive gradient and oracle checks."""
    return ModelConfig(
        stages=(
            StageConfig(stride=4, channels=8, depth=1, attn=SRA(2), heads=1, mlp_ratio=2),
            StageConfig(stride=2, channels=16, depth=1, attn=SRA(1), heads=2, mlp_ratio=2),
        ),
        num_classes=num_classes,
        variant_name="micro",
    )


def ablation_config(ope=True, cffn=True, lsra=False, base="B2"):
    """
    One row of the OPE / CFFN / LSRA ablation grid, built on a base variant.

    ope=cffn=True, lsra=False is B2 itself; adding lsra gives B2-Li.
    `base` is a variant name or a ModelConfig (e.g. micro_config()).
    """
    config = base if isinstance(base, ModelConfig) else config_for(base)
    base = config.variant_name
    if lsra:
        config = config.with_linear_sra()
    flags = "".join(tag for tag, on in (("+OPE", ope), ("+CFFN", cffn), ("+LSRA", lsra)) if on)
    return replace(config, overlapping_patch_embed=ope, conv_ffn=cffn,
                   variant_name=f"{base}{flags or '-baseline'}")


def all_variants():
    return list(VARIANTS)
