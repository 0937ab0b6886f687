"""
Central finite differences, the oracle every tape gradient is checked against.
"""
import numpy as np

from tensor.tensor import Tensor
from utils.config import FINITE_DIFF_EPS, GRAD_NORM_FLOOR


def finite_diff_grad(f, x, eps=FINITE_DIFF_EPS, indices=None):
    """
    Estimate df/dx by central differences.

    Args:
        f: Deterministic function mapping a Tensor of x's shape to a scalar Tensor
        x: Point of evaluation
        eps: Perturbation size, > 0
        indices: Optional iterable of flat indices to perturb; others stay 0

    Returns:
        Tensor: Gradient estimate with x's shape and dtype
    """
    if eps <= 0:
        raise ValueError(f"eps must be positive, got {eps}")
    base = x.numpy().reshape(-1)
    grad = np.zeros_like(base)
    flat_indices = range(base.size) if indices is None else indices
    for i in flat_indices:
        original = base[i]
        base[i] = original + eps
        plus = f(Tensor._wrap(base.reshape(x.shape).copy())).item()
        base[i] = original - eps
        minus = f(Tensor._wrap(base.reshape(x.shape).copy())).item()
        base[i] = original
        grad[i] = (plus - minus) / (2 * eps)
    return Tensor._wrap(grad.reshape(x.shape))


def relative_error(a, b, floor=GRAD_NORM_FLOOR):
    """||a - b|| / max(||a||, ||b||, floor) over whole arrays."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / scale)
