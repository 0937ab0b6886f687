"""
Differentiable primitive operations on Tensor.

Every function validates shapes and dtypes, computes its result with numpy and
records a backward rule on the active tape. No broadcasting beyond scalars.
"""
import math

import numpy as np

from tensor.instrument import report_macs
from tensor.tensor import Tensor, record_op
from utils.errors import InvalidShapeError


def check_same_dtype(*tensors):
    dtypes = {t.dtype for t in tensors}
    if len(dtypes) > 1:
        names = ", ".join(sorted(d.name for d in dtypes))
        raise InvalidShapeError(f"mixed dtypes in one computation: {names}")


def _swap_last(array):
    return np.swapaxes(array, -1, -2)


def matmul(a, b):
    """
    Matrix product over the last two axes.

    Leading axes (if any) must match exactly and are treated as a batch.

    Args:
        a: Tensor [..., m, k]
        b: Tensor [..., k, n]

    Returns:
        Tensor: [..., m, n]
    """
    check_same_dtype(a, b)
    if a.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2] or a.shape[-1] != b.shape[-2]:
        raise InvalidShapeError(f"matmul shape mismatch: {list(a.shape)} x {list(b.shape)}")
    result = np.matmul(a.data, b.data)
    m, k = a.shape[-2:]
    report_macs(math.prod(a.shape[:-2]) * m * k * b.shape[-1])
    a_data, b_data = a.data, b.data

    def rule(g):
        return np.matmul(g, _swap_last(b_data)), np.matmul(_swap_last(a_data), g)

    return record_op("matmul", result, (a, b), rule)


def elementwise(op, a, b):
    """
    Elementwise arithmetic.

    Args:
        op: 'add', 'sub', 'mul' or 'scale'
        a: Tensor
        b: Tensor of a's shape, or a Python scalar

    Returns:
        Tensor: Result of a's shape
    """
    if op == "scale":
        return scale(a, b)
    if not isinstance(b, Tensor):
        b = Tensor._wrap(np.full(a.shape, b, dtype=a.dtype))
    check_same_dtype(a, b)
    if a.shape != b.shape:
        raise InvalidShapeError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")

    if op == "add":
        return record_op("add", a.data + b.data, (a, b), lambda g: (g, g))
    if op == "sub":
        return record_op("sub", a.data - b.data, (a, b), lambda g: (g, -g))
    if op == "mul":
        a_data, b_data = a.data, b.data
        return record_op("mul", a_data * b_data, (a, b), lambda g: (g * b_data, g * a_data))
    raise ValueError(f"unknown elementwise op {op!r}")


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def scale(a, s):
    s = a.dtype.type(s)
    return record_op("scale", a.data * s, (a,), lambda g: (g * s,))


def sum_all(x):
    """Sum of every element, as a single-element tensor."""
    shape, dtype = x.shape, x.dtype
    total = np.array([x.data.sum()], dtype=dtype)
    return record_op("sum", total, (x,), lambda g: (np.full(shape, g.reshape(-1)[0], dtype=dtype),))


def mean_axis(x, axis):
    """Mean over one axis; the axis is removed."""
    axis = axis % x.ndim
    count = x.shape[axis]
    shape = x.shape
    reduced = shape[:axis] + shape[axis + 1:]

    def rule(g):
        return (np.broadcast_to(np.expand_dims(g.reshape(reduced), axis) / count, shape).copy(),)

    return record_op("mean", x.data.mean(axis=axis), (x,), rule)


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.size:
        raise InvalidShapeError(f"cannot reshape {list(x.shape)} into {list(shape)}")
    original = x.shape
    return record_op("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(original),))


def permute(x, axes):
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise InvalidShapeError(f"invalid permutation {axes} for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))
    return record_op("permute", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def tokens_to_map(x, h, w):
    """[n, h*w, c] -> [n, c, h, w]"""
    n, t, c = x.shape
    if t != h * w:
        raise InvalidShapeError(f"token count {t} != {h}*{w}")
    return permute(reshape(x, (n, h, w, c)), (0, 3, 1, 2))


def map_to_tokens(x):
    """[n, c, h, w] -> ([n, h*w, c], h, w)"""
    n, c, h, w = x.shape
    return reshape(permute(x, (0, 2, 3, 1)), (n, h * w, c)), h, w
