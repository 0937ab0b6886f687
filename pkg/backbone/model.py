"""
The four-stage backbone and its classification head.

Parameter shapes are derived from the configuration alone; no parameter
depends on the input resolution, so one weight set serves any image size.
"""
import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from attention.attention import SRA, LinearSRA
from backbone.blocks import encoder_block, overlapping_patch_embed, patch_embed_params
from layers.linear import linear
from layers.norm import layer_norm
from modelio.weights import WeightStore
from tensor.instrument import mac_scope
from tensor.ops import mean_axis, tokens_to_map
from tensor.tensor import Tensor, philox
from utils.config import DEFAULT_DTYPE, DEFAULT_SEED, INIT_STD, MIN_INPUT_SIZE
from utils.errors import InvalidShapeError, WeightMismatchError

logger = logging.getLogger(__name__)

IN_CHANNELS = 3


@dataclass(frozen=True)
class ParamSpec:
    path: str
    shape: Tuple[int, ...]
    init: str  # "normal", "zeros" or "ones"

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def layer(self):
        return self.path.rsplit(".", 1)[0]


def _linear_specs(prefix, c_in, c_out):
    return [ParamSpec(f"{prefix}.weight", (c_in, c_out), "normal"), ParamSpec(f"{prefix}.bias", (c_out,), "zeros")]


def _conv_specs(prefix, weight_shape):
    return [ParamSpec(f"{prefix}.weight", tuple(weight_shape), "normal"),
            ParamSpec(f"{prefix}.bias", (weight_shape[0],), "zeros")]


def _norm_specs(prefix, c):
    return [ParamSpec(f"{prefix}.weight", (c,), "ones"), ParamSpec(f"{prefix}.bias", (c,), "zeros")]


def attention_specs(prefix, c, attn, refine=True):
    """Parameters of one attention layer, in forward order."""
    specs = []
    if isinstance(attn, SRA) and attn.reduction_ratio > 1:
        r = attn.reduction_ratio
        specs += _conv_specs(f"{prefix}.sr", (c, c, r, r)) + _norm_specs(f"{prefix}.norm", c)
    elif isinstance(attn, LinearSRA) and refine:
        specs += _conv_specs(f"{prefix}.sr", (c, c, 1, 1)) + _norm_specs(f"{prefix}.norm", c)
    for name in ("q", "k", "v"):
        specs += _linear_specs(f"{prefix}.{name}", c, c)
    specs += _linear_specs(f"{prefix}.proj", c, c)
    return specs


def block_specs(prefix, stage, config):
    c, hidden = stage.channels, stage.hidden_channels
    specs = _norm_specs(f"{prefix}.norm1", c)
    specs += attention_specs(f"{prefix}.attn", c, stage.attn, config.linear_sra_refine)
    specs += _norm_specs(f"{prefix}.norm2", c)
    specs += _linear_specs(f"{prefix}.mlp.fc1", c, hidden)
    if config.conv_ffn:
        specs += _conv_specs(f"{prefix}.mlp.dwconv", (hidden, 1, 3, 3))
    specs += _linear_specs(f"{prefix}.mlp.fc2", hidden, c)
    return specs


def parameter_specs(config):
    """
    Every parameter of the model, in construction order.

    Args:
        config: ModelConfig

    Returns:
        list: ParamSpec entries (path, shape, init)
    """
    specs = []
    in_channels = IN_CHANNELS
    for i, stage in enumerate(config.stages):
        prefix = f"stages.{i}"
        embed = patch_embed_params(in_channels, stage.channels, stage.stride, config.overlapping_patch_embed)
        specs += _conv_specs(f"{prefix}.patch_embed.proj", embed.weight_shape)
        specs += _norm_specs(f"{prefix}.patch_embed.norm", stage.channels)
        for j in range(stage.depth):
            specs += block_specs(f"{prefix}.blocks.{j}", stage, config)
        specs += _norm_specs(f"{prefix}.norm", stage.channels)
        in_channels = stage.channels
    specs += _linear_specs("head", in_channels, config.num_classes)
    return specs


def init_weights(config, seed=DEFAULT_SEED, dtype=DEFAULT_DTYPE):
    """
    Build a seeded WeightStore: weights ~ normal(0, INIT_STD), biases 0, norm scales 1.

    Args:
        config: ModelConfig
        seed: Philox seed; identical seeds give bit-identical stores
        dtype: float32 or float64

    Returns:
        WeightStore
    """
    rng = philox(seed)
    store = WeightStore()
    for spec in parameter_specs(config):
        if spec.init == "normal":
            data = rng.normal(0.0, INIT_STD, size=spec.shape).astype(dtype)
        elif spec.init == "ones":
            data = np.ones(spec.shape, dtype=dtype)
        else:
            data = np.zeros(spec.shape, dtype=dtype)
        store.add(spec.path, Tensor._wrap(data))
    logger.debug("Initialized %d tensors for %s (seed %d)", len(store), config.variant_name, seed)
    return store


def weight_mismatches(config, store):
    """All differences between a store and the parameters the config calls for."""
    specs = {spec.path: spec for spec in parameter_specs(config)}
    mismatches = []
    for path, spec in specs.items():
        if path not in store:
            mismatches.append(f"missing {path} {list(spec.shape)}")
        elif store[path].shape != spec.shape:
            mismatches.append(f"shape {path}: expected {list(spec.shape)}, found {list(store[path].shape)}")
    for path in store:
        if path not in specs:
            mismatches.append(f"unexpected {path} {list(store[path].shape)}")
    dtypes = sorted({t.dtype.name for _, t in store.items()})
    if len(dtypes) > 1:
        mismatches.append(f"mixed dtypes in store: {', '.join(dtypes)}")
    return mismatches


@dataclass(frozen=True)
class FeaturePyramid:
    """Per-stage feature maps [n, C_i, h_i, w_i] at strides 4, 8, 16, 32."""
    maps: Tuple[Tensor, ...]
    strides: Tuple[int, ...]

    def __len__(self):
        return len(self.maps)

    def __getitem__(self, index):
        return self.maps[index]

    def shapes(self):
        return [m.shape for m in self.maps]


class PyramidVisionTransformerV2:
    """Hierarchical vision transformer with (linear) spatial-reduction attention."""

    def __init__(self, config, weights=None, seed=DEFAULT_SEED, dtype=DEFAULT_DTYPE):
        """
        Initialize the model.

        Args:
            config: ModelConfig
            weights: Optional WeightStore; validated against the config
            seed: Seed for fresh initialization when weights is None
            dtype: dtype for fresh initialization
        """
        self.config = config
        if weights is None:
            weights = init_weights(config, seed, dtype)
        else:
            mismatches = weight_mismatches(config, weights)
            if mismatches:
                raise WeightMismatchError(mismatches)
        self.weights = weights

    @property
    def dtype(self):
        return next(iter(self.weights.items()))[1].dtype

    def with_weights(self, store):
        """Same configuration, different (validated) weights."""
        return PyramidVisionTransformerV2(self.config, weights=store)

    def load_weights(self, store):
        """
        Replace this model's weights in place.

        Raises:
            WeightMismatchError: Listing every missing, unexpected or misshapen entry
        """
        mismatches = weight_mismatches(self.config, store)
        if mismatches:
            raise WeightMismatchError(mismatches)
        self.weights = store
        logger.info("Loaded %d tensors into %s", len(store), self.config.variant_name)
        return self

    def _check_image(self, image):
        if image.ndim != 4 or image.shape[1] != IN_CHANNELS:
            raise InvalidShapeError(f"expected image [n, {IN_CHANNELS}, H, W], got {list(image.shape)}")
        if min(image.shape[2:]) < MIN_INPUT_SIZE:
            raise InvalidShapeError(f"input {image.shape[2]}x{image.shape[3]} is below {MIN_INPUT_SIZE}x{MIN_INPUT_SIZE}")
        if image.dtype != self.dtype:
            raise InvalidShapeError(f"image dtype {image.dtype} differs from weights {self.dtype}")

    def forward_stages(self, image):
        """Run every stage; returns the spatial maps and the last stage's tokens."""
        self._check_image(image)
        x, maps, tokens = image, [], None
        for i, stage in enumerate(self.config.stages):
            scope = self.weights.scope(f"stages.{i}")
            with mac_scope(f"stages.{i}"):
                with mac_scope("patch_embed"):
                    tokens, h, w = overlapping_patch_embed(
                        x, stage.stride, stage.channels, scope.scope("patch_embed"),
                        overlapping=self.config.overlapping_patch_embed,
                    )
                for j in range(stage.depth):
                    with mac_scope(f"blocks.{j}"):
                        tokens = encoder_block(tokens, h, w, stage, scope.scope(f"blocks.{j}"),
                                               conv_ffn=self.config.conv_ffn)
                tokens = layer_norm(tokens, scope["norm.weight"], scope["norm.bias"])
            x = tokens_to_map(tokens, h, w)
            maps.append(x)
        return maps, tokens

    def backbone_forward(self, image):
        """
        Compute the feature pyramid.

        Args:
            image: Tensor [n, 3, H, W]

        Returns:
            FeaturePyramid: One map per stage
        """
        maps, _ = self.forward_stages(image)
        return FeaturePyramid(tuple(maps), self.config.output_strides)

    def classify(self, image):
        """
        Class logits from the mean of the normalized last-stage tokens.

        Args:
            image: Tensor [n, 3, H, W]

        Returns:
            Tensor: [n, num_classes]
        """
        _, tokens = self.forward_stages(image)
        return self.head(tokens)

    def head(self, tokens):
        pooled = mean_axis(tokens, 1)
        with mac_scope("head"):
            return linear(pooled, self.weights["head.weight"], self.weights["head.bias"])

    def forward(self, image):
        """Feature pyramid and logits from one pass."""
        maps, tokens = self.forward_stages(image)
        return FeaturePyramid(tuple(maps), self.config.output_strides), self.head(tokens)

    def num_parameters(self):
        return self.weights.total_elements()
