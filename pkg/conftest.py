"""
Shared pytest fixtures. The repository root is put on sys.path so the
top-level packages import the same way app.py imports them.
"""
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from tensor.gradcheck import finite_diff_grad, relative_error  # noqa: E402
from tensor.tensor import GradTape, Tensor, backward, philox  # noqa: E402


@pytest.fixture
def rng():
    """Seeded Philox generator."""
    return philox(1234)


@pytest.fixture
def tensor64(rng):
    """Random float64 tensor factory: tensor64(shape, scale=1.0)."""
    def make(shape, scale=1.0):
        return Tensor(rng.normal(0.0, scale, size=shape), dtype=np.float64)
    return make


@pytest.fixture
def tape_vs_fd():
    """
    Relative error between the tape gradient and central finite differences.

    Usage: tape_vs_fd(loss_fn, x) where loss_fn maps a Tensor to a scalar Tensor.
    """
    def check(loss_fn, x):
        with GradTape() as tape:
            watched = tape.watch(x)
            loss = loss_fn(watched)
        grads = backward(loss, tape)
        analytic = grads.get(watched.grad_id, np.zeros(x.shape))
        numeric = finite_diff_grad(loss_fn, x).numpy()
        return relative_error(analytic, numeric)
    return check
