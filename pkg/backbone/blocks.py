"""
Building blocks of one stage: overlapping patch embedding, the convolutional
feed-forward network, and the pre-norm encoder block that wires attention and
FFN together.
"""
from attention.attention import SRA, AttentionWeights
from attention.sra import linear_sra_forward, sra_forward
from layers.activation import gelu
from layers.conv import Conv2dParams, conv2d, depthwise_conv3x3, overlapping_embed_params
from layers.linear import linear
from layers.norm import layer_norm
from tensor.instrument import mac_scope
from tensor.ops import add, map_to_tokens, tokens_to_map
from utils.errors import InvalidShapeError


def patch_embed_params(in_channels, out_channels, stride, overlapping=True):
    """Kernel 2S-1 / padding S-1 when overlapping, else kernel S / padding 0."""
    if overlapping:
        return overlapping_embed_params(in_channels, out_channels, stride)
    return Conv2dParams(in_channels, out_channels, kernel=stride, stride=stride)


def overlapping_patch_embed(x, stride, out_channels, weights, overlapping=True):
    """
    Tokenize a feature map with a strided convolution followed by layer norm.

    Args:
        x: Tensor [n, c, h, w]
        stride: S
        out_channels: C'
        weights: Scope holding proj.weight, proj.bias, norm.weight, norm.bias
        overlapping: False gives the non-overlapping (kernel S) embedding

    Returns:
        tuple: (tokens [n, h'*w', C'], h', w')
    """
    params = patch_embed_params(x.shape[1], out_channels, stride, overlapping)
    with mac_scope("proj"):
        embedded = conv2d(x, params, weights["proj.weight"], weights["proj.bias"])
    tokens, h, w = map_to_tokens(embedded)
    return layer_norm(tokens, weights["norm.weight"], weights["norm.bias"]), h, w


def cffn_forward(x, h, w, mlp_ratio, weights, conv=True):
    """
    FC -> 3x3 depthwise conv -> GELU -> FC.

    Args:
        x: Tokens [n, h*w, c]
        h, w: Feature map size
        mlp_ratio: E; hidden width is E*c
        weights: Scope holding fc1.*, dwconv.* (when conv) and fc2.*
        conv: False drops the depthwise conv (plain FFN)

    Returns:
        Tensor: [n, h*w, c]
    """
    if x.ndim != 3 or x.shape[1] != h * w:
        raise InvalidShapeError(f"cffn expects [n, {h}*{w}, c] tokens, got {list(x.shape)}")
    hidden_width = mlp_ratio * x.shape[-1]
    if weights["fc1.weight"].shape[1] != hidden_width:
        raise InvalidShapeError(
            f"fc1 width {weights['fc1.weight'].shape[1]} != expansion {mlp_ratio} x {x.shape[-1]}"
        )
    with mac_scope("fc1"):
        hidden = linear(x, weights["fc1.weight"], weights["fc1.bias"])
    if conv:
        with mac_scope("dwconv"):
            hidden_map = depthwise_conv3x3(tokens_to_map(hidden, h, w), weights["dwconv.weight"], weights["dwconv.bias"])
        hidden, _, _ = map_to_tokens(hidden_map)
    hidden = gelu(hidden)
    with mac_scope("fc2"):
        return linear(hidden, weights["fc2.weight"], weights["fc2.bias"])


def attention_forward(x, h, w, stage, weights):
    """Dispatch on the stage's attention kind."""
    attn_weights = AttentionWeights.from_store(weights)
    if isinstance(stage.attn, SRA):
        return sra_forward(x, h, w, stage.attn.reduction_ratio, stage.heads, attn_weights)
    return linear_sra_forward(x, h, w, stage.attn.pool_size, stage.heads, attn_weights)


def encoder_block(x, h, w, stage, weights, conv_ffn=True):
    """
    Pre-norm residual block: y = x + attn(norm1(x)); out = y + ffn(norm2(y)).

    Args:
        x: Tokens [n, h*w, c]
        h, w: Feature map size
        stage: StageConfig selecting attention kind, heads and expansion
        weights: Scope for one block (norm1.*, attn.*, norm2.*, mlp.*)
        conv_ffn: Use the convolutional FFN

    Returns:
        Tensor: [n, h*w, c]
    """
    if x.ndim != 3 or x.shape[1] != h * w:
        raise InvalidShapeError(f"encoder block expects [n, {h}*{w}, c] tokens, got {list(x.shape)}")
    with mac_scope("attn"):
        attended = attention_forward(
            layer_norm(x, weights["norm1.weight"], weights["norm1.bias"]), h, w, stage, weights.scope("attn")
        )
    y = add(x, attended)
    with mac_scope("mlp"):
        fed = cffn_forward(
            layer_norm(y, weights["norm2.weight"], weights["norm2.bias"]), h, w,
            stage.mlp_ratio, weights.scope("mlp"), conv=conv_ffn,
        )
    return add(y, fed)
