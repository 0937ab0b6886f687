"""
Fully-connected layer applied independently to every token.
"""
import math

from tensor.instrument import report_macs
from tensor.ops import check_same_dtype
from tensor.tensor import record_op
from utils.errors import InvalidShapeError


def linear(x, weight, bias=None):
    """
    Per-token affine map x @ weight + bias.

    Args:
        x: Tensor [..., c_in]
        weight: Tensor [c_in, c_out]
        bias: Optional Tensor [c_out]

    Returns:
        Tensor: [..., c_out]
    """
    inputs = (x, weight) if bias is None else (x, weight, bias)
    check_same_dtype(*inputs)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[0]:
        raise InvalidShapeError(f"linear: input {list(x.shape)} incompatible with weight {list(weight.shape)}")
    c_in, c_out = weight.shape
    if bias is not None and bias.shape != (c_out,):
        raise InvalidShapeError(f"linear: bias {list(bias.shape)} != [{c_out}]")

    rows = math.prod(x.shape[:-1])
    flat = x.data.reshape(rows, c_in)
    out = flat @ weight.data
    report_macs(rows * c_in * c_out)
    if bias is not None:
        out = out + bias.data
    out_shape = x.shape[:-1] + (c_out,)
    x_shape, w_data = x.shape, weight.data

    def rule(grad):
        grad = grad.reshape(rows, c_out)
        grads = ((grad @ w_data.T).reshape(x_shape), flat.T @ grad)
        if bias is not None:
            grads += (grad.sum(axis=0),)
        return grads

    return record_op("linear", out.reshape(out_shape), inputs, rule)
