"""
Layer normalization over the channel (last) dimension of token tensors.
"""
import numpy as np

from tensor.ops import check_same_dtype
from tensor.tensor import record_op
from utils.config import LAYER_NORM_EPS
from utils.errors import InvalidShapeError


def layer_norm(x, gamma, beta, eps=LAYER_NORM_EPS):
    """
    Normalize each token to zero mean and unit variance, then scale and shift.

    Args:
        x: Tensor [..., c]
        gamma: Tensor [c]
        beta: Tensor [c]
        eps: Variance floor, > 0

    Returns:
        Tensor: Same shape as x
    """
    check_same_dtype(x, gamma, beta)
    c = x.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise InvalidShapeError(
            f"layer_norm: gamma {list(gamma.shape)} / beta {list(beta.shape)} do not match {c} channels"
        )
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")

    data = x.data
    mean = data.mean(axis=-1, keepdims=True)
    centered = data - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + x.dtype.type(eps))
    normed = centered * rstd
    gamma_data = gamma.data
    out = normed * gamma_data + beta.data
    reduce_axes = tuple(range(x.ndim - 1))

    def rule(grad):
        d_normed = grad * gamma_data
        d_x = rstd * (
            d_normed
            - d_normed.mean(axis=-1, keepdims=True)
            - normed * (d_normed * normed).mean(axis=-1, keepdims=True)
        )
        return d_x, (grad * normed).sum(axis=reduce_axes), grad.sum(axis=reduce_axes)

    return record_op("layer_norm", out, (x, gamma, beta), rule)
