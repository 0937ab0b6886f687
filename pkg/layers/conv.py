"""
Zero-padded 2-D convolution (general and depthwise) via im2col.

Patches are gathered one kernel offset at a time into a
[n, c, k, k, h_out, w_out] column buffer and multiplied against the weight
per group; the backward pass scatters column gradients back the same way.
"""
from dataclasses import dataclass

import numpy as np

from tensor.instrument import report_macs
from tensor.ops import check_same_dtype
from tensor.tensor import record_op
from utils.errors import InvalidShapeError


@dataclass(frozen=True)
class Conv2dParams:
    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    groups: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0 or self.groups < 1:
            raise InvalidShapeError(f"invalid convolution geometry {self}")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise InvalidShapeError(
                f"groups={self.groups} must divide in_channels={self.in_channels} "
                f"and out_channels={self.out_channels}"
            )

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels // self.groups, self.kernel, self.kernel)

    @property
    def param_count(self):
        """Weight plus bias elements."""
        c_out, c_in, k, _ = self.weight_shape
        return c_out * c_in * k * k + c_out

    def output_size(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        if h + 2 * p < k or w + 2 * p < k:
            raise InvalidShapeError(f"kernel {k} larger than padded input {h + 2 * p}x{w + 2 * p}")
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def macs(self, h, w):
        """Multiply-accumulates for one image of size h x w."""
        h_out, w_out = self.output_size(h, w)
        return h_out * w_out * self.kernel * self.kernel * (self.in_channels // self.groups) * self.out_channels


def overlapping_embed_params(in_channels, out_channels, stride):
    """Kernel 2S-1, padding S-1: output side is ceil(side / S)."""
    return Conv2dParams(in_channels, out_channels, kernel=2 * stride - 1, stride=stride, padding=stride - 1)


def _im2col(padded, k, s, h_out, w_out):
    n, c = padded.shape[:2]
    cols = np.empty((n, c, k, k, h_out, w_out), dtype=padded.dtype)
    for dy in range(k):
        for dx in range(k):
            cols[:, :, dy, dx] = padded[:, :, dy:dy + s * h_out:s, dx:dx + s * w_out:s]
    return cols


def _col2im(cols, padded_shape, k, s, h_out, w_out):
    padded = np.zeros(padded_shape, dtype=cols.dtype)
    for dy in range(k):
        for dx in range(k):
            padded[:, :, dy:dy + s * h_out:s, dx:dx + s * w_out:s] += cols[:, :, dy, dx]
    return padded


def conv2d(x, params, weight, bias=None):
    """
    2-D convolution with zero padding.

    Args:
        x: Tensor [n, c, h, w]
        params: Conv2dParams
        weight: Tensor [c_out, c/g, k, k]
        bias: Optional Tensor [c_out]

    Returns:
        Tensor: [n, c_out, h_out, w_out]
    """
    inputs = (x, weight) if bias is None else (x, weight, bias)
    check_same_dtype(*inputs)
    if x.ndim != 4 or x.shape[1] != params.in_channels:
        raise InvalidShapeError(f"conv2d expects [n, {params.in_channels}, h, w], got {list(x.shape)}")
    if weight.shape != params.weight_shape:
        raise InvalidShapeError(f"conv2d weight {list(weight.shape)} != {list(params.weight_shape)}")
    if bias is not None and bias.shape != (params.out_channels,):
        raise InvalidShapeError(f"conv2d bias {list(bias.shape)} != [{params.out_channels}]")

    n, c, h, w = x.shape
    k, s, p, g = params.kernel, params.stride, params.padding, params.groups
    h_out, w_out = params.output_size(h, w)
    c_group, o_group = c // g, params.out_channels // g
    depth = c_group * k * k

    padded = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    cols = _im2col(padded, k, s, h_out, w_out).reshape(n, g, depth, h_out * w_out)
    kernel = weight.data.reshape(g, o_group, depth)
    out = np.matmul(kernel, cols)  # [n, g, o_group, positions]
    report_macs(n * g * o_group * depth * h_out * w_out)
    out = out.reshape(n, params.out_channels, h_out, w_out)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)
    padded_shape = padded.shape

    def rule(grad):
        grad_groups = grad.reshape(n, g, o_group, h_out * w_out)
        d_weight = np.einsum("ngop,ngkp->gok", grad_groups, cols).reshape(params.weight_shape)
        d_cols = np.matmul(np.swapaxes(kernel, -1, -2), grad_groups)
        d_cols = d_cols.reshape(n, c, k, k, h_out, w_out)
        d_padded = _col2im(d_cols, padded_shape, k, s, h_out, w_out)
        d_x = d_padded[:, :, p:p + h, p:p + w] if p else d_padded
        grads = (d_x, d_weight)
        if bias is not None:
            grads += (grad.sum(axis=(0, 2, 3)),)
        return grads

    return record_op("conv2d", out, inputs, rule)


def depthwise_conv3x3(x, weight, bias=None):
    """
    3x3 depthwise convolution, stride 1, padding 1; spatial size preserved.

    Args:
        x: Tensor [n, c, h, w]
        weight: Tensor [c, 1, 3, 3]
        bias: Optional Tensor [c]

    Returns:
        Tensor: [n, c, h, w]
    """
    channels = x.shape[1]
    if weight.shape != (channels, 1, 3, 3):
        raise InvalidShapeError(f"depthwise weight {list(weight.shape)} does not match {channels} channels")
    params = Conv2dParams(channels, channels, kernel=3, stride=1, padding=1, groups=channels)
    return conv2d(x, params, weight, bias)
