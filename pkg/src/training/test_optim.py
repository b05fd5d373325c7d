"""
Test suite for Adam and the learning-rate schedules
"""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from pydantic import ValidationError

from common.errors import NumericalError
from model.params import ModelParams
from numcore.tensor import Param
from training.optim import ADAM_EPS, AdamState, LRSchedule, PlateauScheduler, TrainConfig, adam_step, step_lr


def _params(**values):
    return ModelParams([Param(name, np.asarray(v, dtype=np.float64)) for name, v in values.items()])


class TestAdamStep:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = _params(w=[[1.0, -2.0], [0.5, 3.0]], b=[0.1, 0.2])
        before = params.snapshot()
        state = AdamState.for_params(params)
        for _ in range(3):
            adam_step(state, params, lr=0.1, weight_decay=0.0)
        for p in params:
            assert_array_equal(p.data, before[p.name])

    def test_matches_hand_recurrence(self):
        params = _params(x=[2.0])
        state = AdamState.for_params(params)
        lr, grads = 0.01, [0.5, -0.3, 0.8]
        x, m, v = 2.0, 0.0, 0.0
        for t, g in enumerate(grads, start=1):
            params["x"].grad = np.array([g])
            adam_step(state, params, lr)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= lr * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + ADAM_EPS)
            assert params["x"].data[0] == pytest.approx(x, abs=1e-15)
        assert state.step == 3

    def test_first_step_moves_by_learning_rate(self):
        params = _params(x=[1.0])
        params["x"].grad = np.array([4.0])
        adam_step(AdamState.for_params(params), params, lr=0.05)
        assert params["x"].data[0] == pytest.approx(0.95, abs=1e-9)

    def test_weight_decay_pulls_towards_zero(self):
        params = _params(w=[3.0, -3.0])
        adam_step(AdamState.for_params(params), params, lr=0.1, weight_decay=0.01)
        assert_allclose(params["w"].data, [2.9, -2.9], atol=1e-6)

    def test_alpha_is_clamped_to_one(self):
        params = ModelParams([Param("block.0.alpha", np.array([0.99])), Param("w", np.array([0.0]))])
        params["block.0.alpha"].grad = np.array([-1.0])
        adam_step(AdamState.for_params(params), params, lr=0.5)
        assert params["block.0.alpha"].data[0] == 1.0

    def test_alpha_is_clamped_to_zero(self):
        params = ModelParams([Param("alpha", np.array([0.01]))])
        params["alpha"].grad = np.array([1.0])
        adam_step(AdamState.for_params(params), params, lr=0.5)
        assert params["alpha"].data[0] == 0.0

    def test_nan_gradient_names_the_param(self):
        params = _params(good=[1.0], bad=[1.0, 2.0])
        params["bad"].grad = np.array([0.0, np.nan])
        with pytest.raises(NumericalError) as excinfo:
            adam_step(AdamState.for_params(params), params, lr=0.1)
        assert excinfo.value.param_name == "bad"
        assert excinfo.value.exit_code == 2
        assert params["good"].data[0] == 1.0


class TestPlateauScheduler:
    def test_strictly_decreasing_loss_keeps_rate(self):
        scheduler = PlateauScheduler(lr=3e-4, patience=12)
        for epoch in range(50):
            assert scheduler.step(100.0 - epoch, epoch) == 3e-4

    def test_constant_loss_halves_every_patience_epochs(self):
        scheduler = PlateauScheduler(lr=1.0, patience=12)
        for epoch in range(40):
            scheduler.step(5.0, epoch)
        assert scheduler.reductions == [12, 24, 36]
        assert scheduler.lr == 0.125

    def test_improvement_just_before_patience_resets_counter(self):
        scheduler = PlateauScheduler(lr=1.0, patience=12)
        losses = [5.0] * 12 + [4.0] + [4.0] * 11
        for epoch, loss in enumerate(losses):
            scheduler.step(loss, epoch)
        assert scheduler.reductions == []
        assert scheduler.lr == 1.0

    def test_equal_loss_is_not_an_improvement(self):
        scheduler = PlateauScheduler(lr=1.0, patience=2)
        for epoch, loss in enumerate([3.0, 3.0, 3.0]):
            scheduler.step(loss, epoch)
        assert scheduler.lr == 0.5


class TestStepSchedule:
    def test_halves_every_period(self):
        for epoch in range(451):
            assert step_lr(3e-4, epoch) == 3e-4 * 0.5 ** (epoch // 75)

    def test_auto_follows_the_model_family(self):
        config = TrainConfig(lr0=0.01)
        assert LRSchedule(config, uses_attention=False).kind == "step"
        assert LRSchedule(config, uses_attention=True).kind == "plateau"
        assert LRSchedule(TrainConfig(scheduler="step"), uses_attention=True).kind == "step"

    def test_schedule_rates(self):
        schedule = LRSchedule(TrainConfig(lr0=1.0, scheduler="step"), uses_attention=True)
        assert [schedule.lr_for(e) for e in (0, 74, 75, 150)] == [1.0, 1.0, 0.5, 0.25]
        plateau = LRSchedule(TrainConfig(lr0=1.0, scheduler="plateau", plateau_patience=1), uses_attention=True)
        plateau.end_epoch(0, 2.0)
        plateau.end_epoch(1, 2.0)
        assert plateau.lr_for(2) == 0.5


class TestTrainConfig:
    @pytest.mark.parametrize(
        "overrides",
        [{"lr0": 0.0}, {"plateau_factor": 1.0}, {"plateau_patience": 0}, {"batch_size": 0}, {"scheduler": "cosine"}],
    )
    def test_invalid_values(self, overrides):
        with pytest.raises(ValidationError):
            TrainConfig(**overrides)

    def test_defaults(self):
        config = TrainConfig()
        assert (config.lr0, config.weight_decay, config.plateau_patience, config.batch_size) == (3e-4, 1e-4, 12, 4)
