"""
Test suite for RMSE, boundary RMSE and the error profile
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from common.errors import ConfigError, DimensionError
from evaluation.metrics import (
    boundary_rmse,
    error_profile,
    per_record_rmse,
    pooled_boundary_rmse,
    pooled_rmse,
    rmse,
)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


class TestRmse:
    def test_perfect_prediction(self, rng):
        target = rng.normal(size=(5, 3))
        assert rmse(target, target) == 0.0

    def test_constant_offset(self, rng):
        target = rng.normal(size=(6, 4))
        assert rmse(target - 2.5, target) == pytest.approx(2.5, abs=1e-12)

    def test_matches_two_pass_computation(self, rng):
        pred, target = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        total = 0.0
        for i in range(4):
            for j in range(3):
                total += (pred[i, j] - target[i, j]) ** 2
        assert rmse(pred, target) == pytest.approx(np.sqrt(total / 12), abs=1e-12)

    def test_symmetric(self, rng):
        pred, target = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
        assert rmse(pred, target) == rmse(target, pred)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            rmse(np.zeros((2, 3)), np.zeros((3, 2)))


class TestBoundaryRmse:
    def test_hand_case(self):
        target = np.array([[1.0, 2.0, 3.0, 4.0]])
        pred = np.array([[2.0, 2.0, 3.0, 6.0]])
        assert boundary_rmse(pred, target, p=1) == pytest.approx(np.sqrt(2.5), abs=1e-9)

    def test_perfect_prediction(self, rng):
        target = rng.normal(size=(15, 20))
        assert boundary_rmse(target, target, p=5) == 0.0

    def test_full_width_equals_rmse(self, rng):
        for _ in range(50):
            m, half = int(rng.integers(1, 6)), int(rng.integers(1, 8))
            pred, target = rng.normal(size=(m, 2 * half)), rng.normal(size=(m, 2 * half))
            assert boundary_rmse(pred, target, half) == pytest.approx(rmse(pred, target), abs=1e-9)

    def test_symmetric_under_column_reversal(self, rng):
        pred, target = rng.normal(size=(3, 12)), rng.normal(size=(3, 12))
        assert boundary_rmse(pred, target, 2) == pytest.approx(boundary_rmse(pred[:, ::-1], target[:, ::-1], 2), abs=1e-15)

    def test_monotone_in_boundary_error(self, rng):
        pred, target = rng.normal(size=(2, 10)), rng.normal(size=(2, 10))
        base = boundary_rmse(pred, target, 3)
        worse = pred.copy()
        worse[1, 8] += np.sign(pred[1, 8] - target[1, 8]) * 5.0
        assert boundary_rmse(worse, target, 3) >= base

    def test_interior_columns_are_ignored(self, rng):
        pred, target = rng.normal(size=(2, 10)), rng.normal(size=(2, 10))
        shifted = pred.copy()
        shifted[:, 3:7] += 100.0
        assert boundary_rmse(shifted, target, 3) == boundary_rmse(pred, target, 3)

    @pytest.mark.parametrize("p", [0, 3])
    def test_p_out_of_range(self, p):
        with pytest.raises(ConfigError):
            boundary_rmse(np.zeros((1, 4)), np.zeros((1, 4)), p)


class TestDatasetLevel:
    def test_pooled_and_per_record(self):
        preds = [np.full((4, 2), 1.0), np.full((4, 2), 3.0)]
        targets = [np.zeros((4, 2)), np.zeros((4, 2))]
        assert pooled_rmse(preds, targets) == pytest.approx(np.sqrt(5.0))
        assert per_record_rmse(preds, targets) == pytest.approx(2.0)

    def test_pooled_boundary_uses_node_major_inputs(self, rng):
        preds = [rng.normal(size=(10, 3)) for _ in range(2)]
        targets = [rng.normal(size=(10, 3)) for _ in range(2)]
        squared = [boundary_rmse(p.T, t.T, 2) ** 2 for p, t in zip(preds, targets)]
        assert pooled_boundary_rmse(preds, targets, 2) == pytest.approx(np.sqrt(np.mean(squared)), abs=1e-12)

    def test_error_profile(self):
        preds = [np.array([[1.0, 3.0], [0.0, 0.0], [2.0, 2.0]])]
        targets = [np.zeros((3, 2))]
        assert_allclose(error_profile(preds, targets), [2.0, 0.0, 2.0])

    def test_error_profile_needs_one_width(self):
        with pytest.raises(DimensionError):
            error_profile([np.zeros((3, 2)), np.zeros((4, 2))], [np.zeros((3, 2)), np.zeros((4, 2))])
