"""
Multi-head scaled dot-product attention and the attention variant descriptors.

mha owns all four projections (q, k, v, output), so SRA and linear SRA only
decide which tokens feed the key/value side.
"""
import math
from dataclasses import dataclass
from typing import Optional, Union

from layers.activation import softmax_lastdim
from layers.linear import linear
from tensor.instrument import mac_scope
from tensor.ops import matmul, permute, reshape, scale
from tensor.tensor import Tensor
from utils.config import DEFAULT_POOL_SIZE
from utils.errors import InvalidConfigError, InvalidShapeError


@dataclass(frozen=True)
class SRA:
    """Spatial-reduction attention: keys/values from a stride-R convolution."""
    reduction_ratio: int

    def __post_init__(self):
        if self.reduction_ratio < 1:
            raise InvalidConfigError(f"reduction ratio must be >= 1, got {self.reduction_ratio}")

    def describe(self):
        return f"sra:{self.reduction_ratio}"


@dataclass(frozen=True)
class LinearSRA:
    """Linear SRA: keys/values from adaptive average pooling to P x P."""
    pool_size: int = DEFAULT_POOL_SIZE

    def __post_init__(self):
        if self.pool_size < 1:
            raise InvalidConfigError(f"pool size must be >= 1, got {self.pool_size}")

    def describe(self):
        return f"linear:{self.pool_size}"


AttentionKind = Union[SRA, LinearSRA]


def parse_attention_kind(text):
    """'sra:8' -> SRA(8), 'linear:7' -> LinearSRA(7)."""
    kind, sep, value = text.strip().partition(":")
    if not sep or not value.strip().lstrip("-").isdigit():
        raise InvalidConfigError(f"attention must look like 'sra:R' or 'linear:P', got {text!r}")
    number = int(value)
    if kind.strip() == "sra":
        return SRA(number)
    if kind.strip() == "linear":
        return LinearSRA(number)
    raise InvalidConfigError(f"unknown attention kind {kind!r}")


@dataclass
class AttentionWeights:
    """Projection weights ([c, c], stored in->out) plus optional reduction stage."""
    q_weight: Tensor
    q_bias: Tensor
    k_weight: Tensor
    k_bias: Tensor
    v_weight: Tensor
    v_bias: Tensor
    proj_weight: Tensor
    proj_bias: Tensor
    sr_weight: Optional[Tensor] = None
    sr_bias: Optional[Tensor] = None
    norm_weight: Optional[Tensor] = None
    norm_bias: Optional[Tensor] = None

    @property
    def channels(self):
        return self.q_weight.shape[0]

    @property
    def has_reduction(self):
        return self.sr_weight is not None

    @classmethod
    def from_store(cls, weights):
        """Collect q.weight, q.bias, ... from a WeightStore or WeightScope."""
        get = weights.get
        return cls(
            q_weight=get("q.weight"), q_bias=get("q.bias"),
            k_weight=get("k.weight"), k_bias=get("k.bias"),
            v_weight=get("v.weight"), v_bias=get("v.bias"),
            proj_weight=get("proj.weight"), proj_bias=get("proj.bias"),
            sr_weight=get("sr.weight"), sr_bias=get("sr.bias"),
            norm_weight=get("norm.weight"), norm_bias=get("norm.bias"),
        )


def split_heads(x, heads):
    """[n, t, c] -> [n, heads, t, c/heads]"""
    n, t, c = x.shape
    return permute(reshape(x, (n, t, heads, c // heads)), (0, 2, 1, 3))


def merge_heads(x):
    """[n, heads, t, d] -> [n, t, heads*d]"""
    n, heads, t, d = x.shape
    return reshape(permute(x, (0, 2, 1, 3)), (n, t, heads * d))


def attention_core(q, k, v, heads, return_weights=False):
    """
    softmax(q k^T / sqrt(d)) v per head on already-projected tokens.

    Args:
        q: Tensor [n, t_q, c]
        k: Tensor [n, t_kv, c]
        v: Tensor [n, t_kv, c]
        heads: Head count N, must divide c

    Returns:
        Tensor [n, t_q, c], plus the [n, N, t_q, t_kv] weights if requested
    """
    c = q.shape[-1]
    if heads < 1 or c % heads:
        raise InvalidConfigError(f"{heads} heads do not divide {c} channels")
    if k.shape != v.shape or k.shape[0] != q.shape[0] or k.shape[-1] != c:
        raise InvalidShapeError(f"attention q {list(q.shape)}, k {list(k.shape)}, v {list(v.shape)} mismatch")
    head_dim = c // heads
    q_heads = split_heads(q, heads)
    k_heads_t = permute(split_heads(k, heads), (0, 1, 3, 2))
    v_heads = split_heads(v, heads)
    scores = scale(matmul(q_heads, k_heads_t), 1.0 / math.sqrt(head_dim))
    weights = softmax_lastdim(scores)
    out = merge_heads(matmul(weights, v_heads))
    return (out, weights) if return_weights else out


def mha(q, k, v, heads, weights, return_weights=False):
    """
    Multi-head attention including the q/k/v and output projections.

    Args:
        q: Query-side tokens [n, t_q, c]
        k: Key-side tokens [n, t_kv, c]
        v: Value-side tokens [n, t_kv, c]
        heads: Head count N
        weights: AttentionWeights
        return_weights: Also return the attention weights

    Returns:
        Tensor [n, t_q, c] (and weights [n, N, t_q, t_kv] if requested)
    """
    c = weights.channels
    if heads < 1 or c % heads:
        raise InvalidConfigError(f"{heads} heads do not divide {c} channels")
    with mac_scope("q"):
        q_proj = linear(q, weights.q_weight, weights.q_bias)
    with mac_scope("k"):
        k_proj = linear(k, weights.k_weight, weights.k_bias)
    with mac_scope("v"):
        v_proj = linear(v, weights.v_weight, weights.v_bias)
    with mac_scope("core"):
        out, attn = attention_core(q_proj, k_proj, v_proj, heads, return_weights=True)
    with mac_scope("proj"):
        out = linear(out, weights.proj_weight, weights.proj_bias)
    return (out, attn) if return_weights else out
