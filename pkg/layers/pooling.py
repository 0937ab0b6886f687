"""
Adaptive average pooling to a fixed P x P grid.

Bin i covers rows [floor(i*h/P), ceil((i+1)*h/P)); columns likewise. The
pooling is separable, so it is applied as two averaging matrices.
"""
import numpy as np

from tensor.tensor import record_op
from utils.errors import InvalidShapeError


def adaptive_bins(size, bins):
    """List of (start, stop) row ranges for each output bin."""
    return [((i * size) // bins, -((-(i + 1) * size) // bins)) for i in range(bins)]


def averaging_matrix(size, bins, dtype=np.float64):
    """[bins, size] matrix whose rows average the rows of each bin."""
    matrix = np.zeros((bins, size), dtype=dtype)
    for i, (start, stop) in enumerate(adaptive_bins(size, bins)):
        matrix[i, start:stop] = 1.0 / (stop - start)
    return matrix


def adaptive_avg_pool(x, pool_size):
    """
    Average-pool a feature map to pool_size x pool_size.

    Args:
        x: Tensor [n, c, h, w]
        pool_size: Output side length P >= 1

    Returns:
        Tensor: [n, c, P, P]
    """
    if x.ndim != 4:
        raise InvalidShapeError(f"adaptive_avg_pool expects [n, c, h, w], got {list(x.shape)}")
    if pool_size < 1:
        raise InvalidShapeError(f"pool size must be >= 1, got {pool_size}")
    h, w = x.shape[2:]
    if h == pool_size and w == pool_size:
        return record_op("adaptive_avg_pool", x.data.copy(), (x,), lambda g: (g,))

    rows = averaging_matrix(h, pool_size, x.dtype)
    cols = averaging_matrix(w, pool_size, x.dtype)
    out = np.einsum("ph,nchw,qw->ncpq", rows, x.data, cols, optimize=True)

    def rule(grad):
        return (np.einsum("ph,ncpq,qw->nchw", rows, grad, cols, optimize=True),)

    return record_op("adaptive_avg_pool", out, (x,), rule)
