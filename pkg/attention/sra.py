"""
Spatial-reduction attention variants.

Both keep queries at full resolution and shrink only the key/value side:
SRA with a stride-R convolution, linear SRA by pooling to a fixed P x P grid
so the attention cost grows linearly with h*w.
"""
from attention.attention import mha
from layers.activation import gelu
from layers.conv import Conv2dParams, conv2d
from layers.norm import layer_norm
from layers.pooling import adaptive_avg_pool
from tensor.instrument import mac_scope
from tensor.ops import map_to_tokens, tokens_to_map
from utils.errors import InvalidShapeError


def _check_tokens(x, h, w):
    if x.ndim != 3 or x.shape[1] != h * w:
        raise InvalidShapeError(f"expected [n, {h}*{w}, c] tokens, got {list(x.shape)}")


def reduce_tokens(x, h, w, reduction_ratio, weights):
    """Stride-R convolution + layer norm over an h x w token map."""
    if h % reduction_ratio or w % reduction_ratio:
        raise InvalidShapeError(f"feature map {h}x{w} is not divisible by reduction ratio {reduction_ratio}")
    c = x.shape[-1]
    params = Conv2dParams(c, c, kernel=reduction_ratio, stride=reduction_ratio)
    with mac_scope("sr"):
        reduced = conv2d(tokens_to_map(x, h, w), params, weights.sr_weight, weights.sr_bias)
    tokens, _, _ = map_to_tokens(reduced)
    return layer_norm(tokens, weights.norm_weight, weights.norm_bias)


def pool_tokens(x, h, w, pool_size, weights):
    """Adaptive average pool to P x P, then (if weights carry it) 1x1 conv + norm + GELU."""
    pooled = adaptive_avg_pool(tokens_to_map(x, h, w), pool_size)
    if not weights.has_reduction:
        tokens, _, _ = map_to_tokens(pooled)
        return tokens
    c = x.shape[-1]
    with mac_scope("sr"):
        refined = conv2d(pooled, Conv2dParams(c, c, kernel=1), weights.sr_weight, weights.sr_bias)
    tokens, _, _ = map_to_tokens(refined)
    return gelu(layer_norm(tokens, weights.norm_weight, weights.norm_bias))


def sra_forward(x, h, w, reduction_ratio, heads, weights, return_weights=False):
    """
    Spatial-reduction attention.

    Args:
        x: Tokens [n, h*w, c]
        h, w: Feature map size
        reduction_ratio: R; R == 1 is plain multi-head attention
        heads: Head count N
        weights: AttentionWeights (with sr/norm entries when R > 1)

    Returns:
        Tensor [n, h*w, c] (and attention weights if requested)
    """
    _check_tokens(x, h, w)
    if reduction_ratio == 1:
        return mha(x, x, x, heads, weights, return_weights=return_weights)
    kv = reduce_tokens(x, h, w, reduction_ratio, weights)
    return mha(x, kv, kv, heads, weights, return_weights=return_weights)


def linear_sra_forward(x, h, w, pool_size, heads, weights, return_weights=False):
    """
    Linear spatial-reduction attention: always P*P key/value tokens.

    Args:
        x: Tokens [n, h*w, c]
        h, w: Feature map size, any >= 1
        pool_size: P
        heads: Head count N
        weights: AttentionWeights; sr/norm entries enable the post-pool refinement

    Returns:
        Tensor [n, h*w, c] (and attention weights if requested)
    """
    _check_tokens(x, h, w)
    kv = pool_tokens(x, h, w, pool_size, weights)
    return mha(x, kv, kv, heads, weights, return_weights=return_weights)
