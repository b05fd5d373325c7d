"""
Test suite for the numcore ops and tape

Covers the forward values of every op, the gradient contract of ``backward``
and the finite-difference suite the CLI exposes.
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from common.errors import DimensionError, UsageError
from numcore import ops
from numcore.gradcheck import GRAD_TOLERANCE, RELATIVE_FLOOR, check_gradients, relative_error, run_op_suite
from numcore.tensor import Param, Tensor, backward, no_grad


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class TestMatmul:
    """Matrix products and their gradients"""

    def test_identity(self):
        out = ops.matmul(Tensor(np.eye(2)), Tensor([[1.0, 2.0], [3.0, 4.0]]))
        assert_array_equal(out.data, [[1.0, 2.0], [3.0, 4.0]])

    def test_row_by_column(self):
        out = ops.matmul(Tensor([[1.0, 2.0]]), Tensor([[3.0], [4.0]]))
        assert_array_equal(out.data, [[11.0]])

    def test_gradient_matches_finite_differences(self, rng):
        a = Param("a", rng.normal(size=(3, 4)))
        b = Param("b", rng.normal(size=(4, 2)))
        target = rng.normal(size=(3, 2))
        errors = check_gradients(lambda: ops.mse_loss(ops.matmul(a, b), target), [a, b])
        assert max(errors.values()) <= 1e-6

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(DimensionError) as excinfo:
            ops.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        assert "(2, 3)" in str(excinfo.value)

    def test_batched_product(self, rng):
        a, b = rng.normal(size=(4, 2, 3)), rng.normal(size=(4, 3, 5))
        assert_allclose(ops.matmul(a, b).data, np.matmul(a, b))


class TestSoftmax:
    def test_equal_scores_are_uniform(self):
        assert_allclose(ops.softmax_lastdim([0.0, 0.0, 0.0]).data, [1 / 3] * 3, atol=1e-15)

    def test_large_logits_stay_finite(self):
        out = ops.softmax_lastdim([1000.0, 0.0]).data
        assert np.all(np.isfinite(out))
        assert out[0] == 1.0
        assert out[1] == 0.0

    def test_known_values(self):
        out = ops.softmax_lastdim([1.0, 2.0, 3.0]).data
        assert_allclose(out, [0.09003057, 0.24472847, 0.66524096], atol=1e-8)

    def test_rows_sum_to_one_and_shift_invariant(self, rng):
        logits = rng.normal(size=(6, 7)) * 5
        out = ops.softmax_lastdim(logits).data
        assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)
        shifted = ops.softmax_lastdim(logits + rng.normal(size=(6, 1)) * 10).data
        assert_allclose(shifted, out, atol=1e-12)


class TestLayerNorm:
    @pytest.fixture
    def affine(self):
        return Param("gain", np.ones(8)), Param("bias", np.zeros(8))

    def test_constant_slice_normalizes_to_zero(self):
        out = ops.layernorm([1.0, 1.0, 1.0], np.ones(3), np.zeros(3))
        assert_array_equal(out.data, [0.0, 0.0, 0.0])

    def test_symmetric_two_point(self):
        out = ops.layernorm([1.0, 3.0], np.ones(2), np.zeros(2), eps=1e-14)
        assert_allclose(out.data, [-1.0, 1.0], atol=1e-9)

    def test_rows_have_zero_mean_unit_variance(self, rng, affine):
        gain, bias = affine
        out = ops.layernorm(rng.normal(size=(4, 8)) * 3 + 2, gain, bias, eps=1e-15).data
        assert_allclose(out.mean(axis=-1), 0.0, atol=1e-9)
        assert_allclose(out.var(axis=-1), 1.0, atol=1e-9)

    def test_shift_and_scale_invariance(self, rng, affine):
        gain, bias = affine
        x = rng.normal(size=(3, 8))
        base = ops.layernorm(x, gain, bias, eps=1e-15).data
        assert_allclose(ops.layernorm(x + 7.5, gain, bias, eps=1e-15).data, base, atol=1e-9)
        assert_allclose(ops.layernorm(x * 4.0, gain, bias, eps=1e-15).data, base, atol=1e-9)

    def test_affine_is_applied(self):
        out = ops.layernorm([1.0, 3.0], [2.0, 2.0], [0.5, 0.5], eps=1e-14)
        assert_allclose(out.data, [-1.5, 2.5], atol=1e-9)


class TestHardswish:
    def test_reference_points(self):
        out = ops.hardswish([0.0, 6.0, -4.0, 1.0]).data
        assert_allclose(out, [0.0, 6.0, 0.0, 4.0 / 6.0])

    def test_derivative_conventions_at_corners(self):
        x = Param("x", np.array([-3.0, 3.0]))
        backward(ops.sum_all(ops.hardswish(x)))
        assert_array_equal(x.grad, [0.0, 1.0])


class TestRelu:
    def test_values_and_gradient(self):
        x = Param("x", np.array([-1.0, 0.5, 2.0]))
        out = ops.relu(x)
        assert_array_equal(out.data, [0.0, 0.5, 2.0])
        backward(ops.sum_all(out))
        assert_array_equal(x.grad, [0.0, 1.0, 1.0])


class TestSegmentMean:
    def test_two_point_mean(self):
        x = np.array([[9.0, 9.0], [0.0, 2.0], [2.0, 0.0]])
        adjacency = ops.mean_aggregator([[1, 2], [0], [0]])
        assert_array_equal(ops.segment_mean(x, adjacency).data[0], [1.0, 1.0])

    def test_single_neighbor_identity(self):
        adjacency = ops.mean_aggregator([[1], [0]])
        out = ops.segment_mean(np.array([[3.0], [5.0]]), adjacency)
        assert_array_equal(out.data, [[5.0], [3.0]])

    def test_matches_naive_loop(self, rng):
        neighbors = [[1, 2, 5], [0], [0, 3], [2, 4, 5], [3], [0, 3, 4]]
        x = rng.normal(size=(6, 4))
        out = ops.segment_mean(x, ops.mean_aggregator(neighbors)).data
        expected = np.array([np.mean(x[nbrs], axis=0) for nbrs in neighbors])
        assert_allclose(out, expected, rtol=0, atol=1e-15)

    def test_weighted_mean(self):
        adjacency = ops.mean_aggregator([[1, 2], [0], [0]], weights=[[1.0, 3.0], [1.0], [1.0]])
        out = ops.segment_mean(np.array([[0.0], [4.0], [8.0]]), adjacency)
        assert_allclose(out.data[0], [7.0])

    def test_empty_neighbor_list_is_zero(self):
        adjacency = ops.mean_aggregator([[], [0]])
        out = ops.segment_mean(np.array([[2.0], [5.0]]), adjacency)
        assert_array_equal(out.data, [[0.0], [2.0]])

    def test_trailing_axes_are_aggregated_together(self, rng):
        neighbors = [[1], [0, 2], [1]]
        x = rng.normal(size=(3, 2, 4))
        out = ops.segment_mean(x, ops.mean_aggregator(neighbors)).data
        assert_allclose(out[1], (x[0] + x[2]) / 2, atol=1e-15)


class TestDropout:
    def test_eval_mode_is_identity(self, rng):
        x = Tensor(rng.normal(size=(3, 3)))
        assert ops.dropout(x, 0.5, rng, train=False) is x

    def test_zero_probability_is_identity_in_train_mode(self, rng):
        x = Tensor(rng.normal(size=(3, 3)))
        assert ops.dropout(x, 0.0, rng, train=True) is x

    def test_deterministic_given_seed(self):
        x = Param("x", np.ones((4, 5)))
        first = ops.dropout(x, 0.4, np.random.default_rng(7), train=True).data
        second = ops.dropout(x, 0.4, np.random.default_rng(7), train=True).data
        assert_array_equal(first, second)
        assert set(np.unique(first)) <= {0.0, 1.0 / 0.6}


class TestShapeOps:
    def test_transpose_reshape_concat(self, rng):
        x = rng.normal(size=(2, 3, 4))
        assert_array_equal(ops.transpose(x, (2, 0, 1)).data, np.transpose(x, (2, 0, 1)))
        assert ops.reshape(x, (6, 4)).shape == (6, 4)
        assert ops.concat([x, x], axis=1).shape == (2, 6, 4)

    def test_bad_reshape_raises(self):
        with pytest.raises(DimensionError):
            ops.reshape(np.ones((2, 3)), (4, 2))

    def test_scalar_mix(self):
        out = ops.scalar_mix(np.array([0.25]), np.array([4.0]), np.array([8.0]))
        assert_allclose(out.data, [7.0])


class TestBackward:
    """Tape replay contract"""

    def test_linear_loss_gradient(self, rng):
        w = Param("w", np.eye(3))
        x = rng.normal(size=(3,))
        loss = ops.sum_all(ops.matmul(w, Tensor(x.reshape(3, 1))))
        backward(loss, [w])
        assert_allclose(w.grad, np.tile(x, (3, 1)))
        errors = check_gradients(lambda: ops.sum_all(ops.matmul(w, Tensor(x.reshape(3, 1)))), [w])
        assert errors["w"] <= 1e-6

    def test_unreachable_param_gets_zero_grad(self):
        used, unused = Param("used", np.ones(2)), Param("unused", np.ones(2))
        unused.grad += 5.0
        backward(ops.sum_all(used), [used, unused])
        assert_array_equal(unused.grad, [0.0, 0.0])
        assert_array_equal(used.grad, [1.0, 1.0])

    def test_reused_tensor_accumulates(self):
        x = Param("x", np.array([2.0]))
        y = ops.add(x, x)
        backward(ops.sum_all(ops.add(y, x)), [x])
        assert_array_equal(x.grad, [3.0])

    def test_second_backward_is_usage_error(self):
        x = Param("x", np.array([1.0, 2.0]))
        loss = ops.sum_all(x)
        backward(loss)
        with pytest.raises(UsageError):
            backward(loss)

    def test_untaped_loss_is_usage_error(self):
        with pytest.raises(UsageError):
            backward(Tensor(1.0))

    def test_no_grad_records_nothing(self):
        x = Param("x", np.ones(3))
        with no_grad():
            loss = ops.sum_all(x)
        assert loss.node is None


class TestGradcheckSuite:
    def test_every_op_passes(self):
        results = run_op_suite(seed=0)
        failing = [r.name for r in results if not r.passed]
        assert failing == []
        assert {"matmul", "softmax_lastdim", "layernorm", "segment_mean", "dropout"} <= {r.name for r in results}

    def test_small_gradients_are_compared_relatively(self):
        assert relative_error(np.array([1e-5]), np.array([2e-5])) == pytest.approx(0.5)
        assert relative_error(np.array([1e-5]), np.array([1.00001e-5])) <= GRAD_TOLERANCE
        assert relative_error(np.array([1e-5]), np.array([1.01e-5])) > GRAD_TOLERANCE

    def test_floor_only_applies_below_its_magnitude(self):
        assert RELATIVE_FLOOR <= 1e-6
        assert relative_error(np.array([0.0]), np.array([1e-12])) == pytest.approx(1e-12 / RELATIVE_FLOOR)
        assert relative_error(np.array([]), np.array([])) == 0.0
