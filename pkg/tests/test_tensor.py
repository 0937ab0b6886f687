"""
Tests for the tensor core: construction, primitive ops, the gradient tape,
finite differences and MAC instrumentation.
"""

import numpy as np
import pytest

from tensor.gradcheck import finite_diff_grad, relative_error
from tensor.instrument import MacCounter, current_scope, mac_scope, report_macs
from tensor.ops import (
    add,
    elementwise,
    map_to_tokens,
    matmul,
    mean_axis,
    mul,
    permute,
    reshape,
    scale,
    sub,
    sum_all,
    tokens_to_map,
)
from tensor.tensor import (
    Constant,
    GradTape,
    SeededNormal,
    SeededUniform,
    Tensor,
    Zeros,
    backward,
    tensor_create,
)
from utils.config import PRIMITIVE_GRAD_TOL
from utils.errors import InvalidShapeError


# =============================================================================
# Construction
# =============================================================================

class TestTensorCreate:

    def test_zero_fill(self):
        t = tensor_create([2, 3], Zeros())
        assert t.shape == (2, 3)
        assert t.size == 6
        assert np.all(t.numpy() == 0)

    def test_constant_fill(self):
        t = tensor_create([1], Constant(5.0))
        np.testing.assert_array_equal(t.numpy(), [5.0])

    def test_seeded_uniform_is_bit_identical(self):
        a = tensor_create([2, 2], SeededUniform(7, -1.0, 1.0))
        b = tensor_create([2, 2], SeededUniform(7, -1.0, 1.0))
        assert a.numpy().tobytes() == b.numpy().tobytes()
        assert np.all(a.numpy() >= -1.0) and np.all(a.numpy() < 1.0)

    def test_different_seeds_differ(self):
        a = tensor_create([8], SeededNormal(1))
        b = tensor_create([8], SeededNormal(2))
        assert not np.array_equal(a.numpy(), b.numpy())

    def test_default_dtype_is_float32(self):
        assert tensor_create([3]).dtype == np.float32
        assert tensor_create([3], dtype=np.float64).dtype == np.float64

    @pytest.mark.parametrize("shape", [[0], [2, 0, 3], []])
    def test_empty_extent_rejected(self, shape):
        with pytest.raises(InvalidShapeError):
            tensor_create(shape)

    def test_overflowing_shape_rejected(self):
        with pytest.raises(InvalidShapeError):
            tensor_create([2 ** 40, 2 ** 40])

    def test_unsupported_dtype_rejected(self):
        with pytest.raises(InvalidShapeError):
            tensor_create([2], dtype=np.int32)


class TestTensor:

    def test_buffer_is_read_only(self):
        t = Tensor(np.ones((2, 2)))
        with pytest.raises(ValueError):
            t.data[0, 0] = 3.0

    def test_numpy_returns_a_copy(self):
        t = Tensor(np.zeros(3))
        copy = t.numpy()
        copy[0] = 1.0
        assert t.numpy()[0] == 0.0

    def test_row_major_layout(self):
        t = Tensor(np.arange(24).reshape(2, 3, 4), dtype=np.float64)
        flat = t.data.reshape(-1)
        assert flat[1 * 12 + 2 * 4 + 3] == t.data[1, 2, 3]
        assert t.data.flags.c_contiguous

    def test_integer_input_becomes_default_float(self):
        assert Tensor([1, 2, 3]).dtype == np.float32

    def test_scalar_becomes_rank_one(self):
        t = Tensor(2.5, dtype=np.float64)
        assert t.shape == (1,)
        assert t.item() == 2.5

    def test_item_needs_single_element(self):
        with pytest.raises(InvalidShapeError):
            Tensor(np.zeros(2)).item()


# =============================================================================
# Primitive ops
# =============================================================================

class TestMatmul:

    def test_identity(self):
        eye = Tensor([[1.0, 0.0], [0.0, 1.0]])
        b = Tensor([[3.0, 4.0], [5.0, 6.0]])
        np.testing.assert_array_equal(matmul(eye, b).numpy(), b.numpy())

    def test_hand_evaluated(self):
        out = matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        np.testing.assert_array_equal(out.numpy(), [[11.0]])

    def test_inner_mismatch(self):
        with pytest.raises(InvalidShapeError):
            matmul(tensor_create([3, 4]), tensor_create([5, 6]))

    def test_mixed_dtypes_rejected(self):
        with pytest.raises(InvalidShapeError):
            matmul(tensor_create([2, 2], dtype=np.float32), tensor_create([2, 2], dtype=np.float64))

    def test_batched_leading_axes(self, tensor64):
        a, b = tensor64((2, 3, 4, 5)), tensor64((2, 3, 5, 2))
        np.testing.assert_allclose(matmul(a, b).numpy(), np.matmul(a.numpy(), b.numpy()))

    def test_associativity(self, tensor64):
        a, b, c = tensor64((4, 5)), tensor64((5, 3)), tensor64((3, 6))
        left = matmul(matmul(a, b), c).numpy()
        right = matmul(a, matmul(b, c)).numpy()
        assert relative_error(left, right) < 1e-6


class TestElementwise:

    def test_add_zeros_is_identity(self, tensor64):
        x = tensor64((3, 2))
        np.testing.assert_array_equal(add(x, tensor_create((3, 2), dtype=np.float64)).numpy(), x.numpy())

    def test_mul_hand_evaluated(self):
        np.testing.assert_array_equal(mul(Tensor([2.0, 3.0]), Tensor([4.0, 5.0])).numpy(), [8.0, 15.0])

    def test_scale_by_one_is_identity(self, tensor64):
        x = tensor64((4,))
        np.testing.assert_array_equal(scale(x, 1.0).numpy(), x.numpy())

    def test_scalar_operand(self):
        np.testing.assert_array_equal(elementwise("sub", Tensor([3.0, 4.0]), 1.0).numpy(), [2.0, 3.0])
        np.testing.assert_array_equal(elementwise("scale", Tensor([3.0, 4.0]), 2.0).numpy(), [6.0, 8.0])

    def test_shape_mismatch(self):
        with pytest.raises(InvalidShapeError):
            add(tensor_create([2, 3]), tensor_create([3, 2]))

    def test_unknown_op(self):
        with pytest.raises(ValueError):
            elementwise("div", Tensor([1.0]), Tensor([1.0]))


class TestShapeOps:

    def test_reshape_rejects_size_change(self):
        with pytest.raises(InvalidShapeError):
            reshape(tensor_create([2, 3]), (4, 2))

    def test_permute_rejects_bad_axes(self):
        with pytest.raises(InvalidShapeError):
            permute(tensor_create([2, 3]), (0, 0))

    def test_tokens_map_round_trip(self, tensor64):
        x = tensor64((2, 12, 5))
        fmap = tokens_to_map(x, 3, 4)
        assert fmap.shape == (2, 5, 3, 4)
        # token y*w + x holds pixel (y, x)
        np.testing.assert_array_equal(fmap.numpy()[1, :, 2, 1], x.numpy()[1, 2 * 4 + 1])
        tokens, h, w = map_to_tokens(fmap)
        assert (h, w) == (3, 4)
        np.testing.assert_array_equal(tokens.numpy(), x.numpy())

    def test_tokens_to_map_checks_count(self):
        with pytest.raises(InvalidShapeError):
            tokens_to_map(tensor_create([1, 10, 2]), 3, 3)

    def test_mean_axis(self):
        x = Tensor(np.arange(6.0).reshape(1, 3, 2), dtype=np.float64)
        np.testing.assert_allclose(mean_axis(x, 1).numpy(), [[2.0, 3.0]])


# =============================================================================
# Gradient tape
# =============================================================================

class TestBackward:

    def test_square_sum(self):
        x = Tensor([1.0, 2.0, 3.0], dtype=np.float64)
        with GradTape() as tape:
            xw = tape.watch(x)
            loss = sum_all(mul(xw, xw))
        grads = backward(loss, tape)
        np.testing.assert_allclose(grads[xw.grad_id], [2.0, 4.0, 6.0])

    def test_sum_gives_ones(self, tensor64):
        x = tensor64((2, 3, 4))
        with GradTape() as tape:
            xw = tape.watch(x)
            loss = sum_all(xw)
        grads = backward(loss, tape)
        np.testing.assert_array_equal(grads[xw.grad_id], np.ones((2, 3, 4)))
        np.testing.assert_array_equal(grads[loss.grad_id], [1.0])

    def test_matmul_against_finite_differences(self, tensor64):
        x, w = tensor64((3, 4)), tensor64((4, 2))
        with GradTape() as tape:
            xw, ww = tape.watch(x), tape.watch(w)
            loss = sum_all(matmul(xw, ww))
        grads = backward(loss, tape)
        fd_x = finite_diff_grad(lambda t: sum_all(matmul(t, w)), x).numpy()
        fd_w = finite_diff_grad(lambda t: sum_all(matmul(x, t)), w).numpy()
        assert relative_error(grads[xw.grad_id], fd_x) < PRIMITIVE_GRAD_TOL
        assert relative_error(grads[ww.grad_id], fd_w) < PRIMITIVE_GRAD_TOL

    def test_gradient_has_parameter_shape(self, tensor64):
        w = tensor64((3, 3))
        x = tensor64((2, 3))
        with GradTape() as tape:
            ww = tape.watch(w)
            loss = sum_all(matmul(x, ww))
        backward(loss, tape)
        assert tape.gradient(ww).shape == w.shape

    def test_non_scalar_loss(self, tensor64):
        with GradTape() as tape:
            x = tape.watch(tensor64((3,)))
            out = scale(x, 2.0)
        with pytest.raises(InvalidShapeError):
            backward(out, tape)

    def test_untracked_loss(self):
        with GradTape() as tape:
            loss = sum_all(Tensor([1.0, 2.0]))
        with pytest.raises(InvalidShapeError):
            backward(loss, tape)

    def test_nothing_recorded_without_tape(self, tensor64):
        tape = GradTape()
        x = tape.watch(tensor64((2,)))
        out = scale(x, 3.0)
        assert out.grad_id is None
        assert tape.nodes == []

    def test_nodes_are_topologically_ordered(self, tensor64):
        with GradTape() as tape:
            x = tape.watch(tensor64((2, 2)))
            loss = sum_all(matmul(add(x, x), x))
        seen = {x.grad_id}
        for node in tape.nodes:
            assert all(i is None or i in seen for i in node.input_ids)
            seen.add(node.output_id)
        assert loss.grad_id == tape.nodes[-1].output_id

    @pytest.mark.parametrize("name, fn", [
        ("add", lambda t: sum_all(mul(add(t, t), t))),
        ("sub", lambda t: sum_all(mul(sub(t, scale(t, 0.5)), t))),
        ("reshape", lambda t: sum_all(mul(reshape(t, (3, 4)), reshape(t, (3, 4))))),
        ("permute", lambda t: sum_all(matmul(permute(t, (1, 0)), t))),
        ("mean", lambda t: sum_all(mul(mean_axis(t, 0), mean_axis(t, 0)))),
    ])
    def test_primitive_gradients(self, name, fn, tensor64, tape_vs_fd):
        x = tensor64((4, 3))
        if name == "reshape":
            x = tensor64((2, 6))
        assert tape_vs_fd(fn, x) < PRIMITIVE_GRAD_TOL


# =============================================================================
# Finite differences
# =============================================================================

class TestFiniteDiff:

    def test_square(self):
        x = Tensor([3.0], dtype=np.float64)
        grad = finite_diff_grad(lambda t: sum_all(mul(t, t)), x, eps=1e-5)
        assert abs(grad.item() - 6.0) < 1e-8

    def test_linear_function_exact(self, tensor64):
        x = tensor64((2, 3))
        grad = finite_diff_grad(sum_all, x)
        np.testing.assert_allclose(grad.numpy(), np.ones((2, 3)), atol=1e-9)

    def test_subset_of_indices(self, tensor64):
        x = tensor64((5,))
        grad = finite_diff_grad(lambda t: sum_all(mul(t, t)), x, indices=[1, 3]).numpy()
        np.testing.assert_allclose(grad[[1, 3]], 2 * x.numpy()[[1, 3]], rtol=0, atol=1e-9)
        assert grad[0] == 0.0 and grad[2] == 0.0 and grad[4] == 0.0

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_grad(sum_all, Tensor([1.0]), eps=0.0)

    def test_relative_error_floor(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error([1.0, 0.0], [1.0, 0.0]) == 0.0
        assert relative_error([2.0], [1.0]) == pytest.approx(0.5)


# =============================================================================
# MAC instrumentation
# =============================================================================

class TestMacCounter:

    def test_matmul_reports_under_scope(self):
        with MacCounter() as counter:
            with mac_scope("block"), mac_scope("q"):
                assert current_scope() == "block.q"
                matmul(tensor_create([3, 4]), tensor_create([4, 5]))
        assert counter.per_path == {"block.q": 60}
        assert counter.total == 60

    def test_batched_matmul_counts_batch(self):
        with MacCounter() as counter:
            matmul(tensor_create([2, 3, 4, 5]), tensor_create([2, 3, 5, 2]))
        assert counter.total == 2 * 3 * 4 * 5 * 2

    def test_no_counter_is_a_noop(self):
        report_macs(100)
        assert current_scope() == ""

    def test_elementwise_ops_are_not_counted(self):
        with MacCounter() as counter:
            mul(tensor_create([4]), tensor_create([4]))
        assert counter.total == 0
