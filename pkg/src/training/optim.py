"""
Optimisation - Adam with L2 weight decay and the two learning-rate schedules
"""

import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, model_validator

from common.errors import NumericalError
from model.params import ModelParams

logger = structlog.get_logger(__name__)

BETA1 = 0.9
BETA2 = 0.999
ADAM_EPS = 1e-8


class TrainConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    lr0: float = 3e-4
    weight_decay: float = 1e-4
    epochs: int = 100
    plateau_patience: int = 12
    plateau_factor: float = 0.5
    # auto: step schedule for models without attention blocks, plateau otherwise
    scheduler: Literal["auto", "plateau", "step"] = "auto"
    step_period: int = 75
    step_factor: float = 0.5
    batch_size: int = 4
    seed: int = 0
    trials: int = 5
    log_every: int = 10

    @model_validator(mode="after")
    def _check_values(self) -> "TrainConfig":
        if self.lr0 <= 0:
            raise ValueError(f"lr0 must be positive, got {self.lr0}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.plateau_patience < 1:
            raise ValueError(f"plateau_patience must be at least 1, got {self.plateau_patience}")
        for name in ("plateau_factor", "step_factor"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        for name in ("step_period", "batch_size", "trials", "log_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1, got {getattr(self, name)}")
        return self

    def resolved_scheduler(self, uses_attention: bool) -> str:
        if self.scheduler != "auto":
            return self.scheduler
        return "plateau" if uses_attention else "step"


@dataclass
class AdamState:
    """First and second moments per parameter plus the shared step count"""

    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamState":
        return cls(
            first={p.name: np.zeros_like(p.data) for p in params},
            second={p.name: np.zeros_like(p.data) for p in params},
        )


def adam_step(state: AdamState, params: ModelParams, lr: float, weight_decay: float = 0.0) -> AdamState:
    """One bias-corrected Adam update from the gradients stored on ``params``.

    Weight decay is an L2 term added to each gradient. Mixing weights are
    clamped to [0, 1] afterwards.
    """
    for param in params:
        if not np.all(np.isfinite(param.grad)):
            raise NumericalError(f"non-finite gradient in {param.name!r}", param_name=param.name)

    state.step += 1
    correction1 = 1.0 - BETA1**state.step
    correction2 = 1.0 - BETA2**state.step
    for param in params:
        grad = param.grad + weight_decay * param.data if weight_decay else param.grad
        m = state.first[param.name]
        v = state.second[param.name]
        m *= BETA1
        m += (1.0 - BETA1) * grad
        v *= BETA2
        v += (1.0 - BETA2) * grad * grad
        param.data -= lr * (m / correction1) / (np.sqrt(v / correction2) + ADAM_EPS)
    params.clamp_alphas()
    return state


@dataclass
class PlateauScheduler:
    """Multiply the rate by ``factor`` after ``patience`` epochs without a strictly lower loss"""

    lr: float
    patience: int = 12
    factor: float = 0.5
    best: float = math.inf
    bad_epochs: int = 0
    reductions: List[int] = field(default_factory=list)

    def step(self, val_loss: float, epoch: int) -> float:
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            return self.lr
        self.bad_epochs += 1
        if self.bad_epochs >= self.patience:
            self.lr *= self.factor
            self.bad_epochs = 0
            self.reductions.append(epoch)
            logger.info("learning rate reduced", epoch=epoch, lr=self.lr)
        return self.lr


def step_lr(lr0: float, epoch: int, period: int = 75, factor: float = 0.5) -> float:
    """Rate for ``epoch`` under the fixed step schedule"""
    return lr0 * factor ** (epoch // period)


class LRSchedule:
    """Rate used in each epoch, for either schedule"""

    def __init__(self, config: TrainConfig, uses_attention: bool):
        self.kind = config.resolved_scheduler(uses_attention)
        self._config = config
        self._plateau: Optional[PlateauScheduler] = None
        if self.kind == "plateau":
            self._plateau = PlateauScheduler(config.lr0, config.plateau_patience, config.plateau_factor)

    def lr_for(self, epoch: int) -> float:
        if self._plateau is not None:
            return self._plateau.lr
        return step_lr(self._config.lr0, epoch, self._config.step_period, self._config.step_factor)

    def end_epoch(self, epoch: int, val_loss: float) -> None:
        if self._plateau is not None:
            self._plateau.step(val_loss, epoch)
