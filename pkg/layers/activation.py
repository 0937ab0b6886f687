"""
Activations: exact (erf-based) GELU and numerically stable softmax.
"""
import math

import numpy as np
from scipy.special import ndtr

from tensor.tensor import record_op

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(x):
    """x * Phi(x) with Phi the standard normal CDF (not the tanh approximation)."""
    data = x.data
    cdf = ndtr(data).astype(x.dtype, copy=False)

    def rule(grad):
        pdf = (_INV_SQRT_2PI * np.exp(-0.5 * data * data)).astype(data.dtype, copy=False)
        return (grad * (cdf + data * pdf),)

    return record_op("gelu", data * cdf, (x,), rule)


def softmax_lastdim(x):
    """Max-subtracted softmax over the last axis; rows sum to 1."""
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=-1, keepdims=True)

    def rule(grad):
        return (probs * (grad - (grad * probs).sum(axis=-1, keepdims=True)),)

    return record_op("softmax", probs, (x,), rule)
