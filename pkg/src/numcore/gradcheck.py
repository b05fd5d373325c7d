"""
Finite-difference gradient checks for the numcore ops.

``check_gradients`` compares tape gradients against central differences for
any scalar-valued builder; ``run_op_suite`` applies it to every differentiable
op on random inputs kept away from non-smooth points.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Sequence

import numpy as np
import structlog

from numcore import ops
from numcore.tensor import Param, Tensor, backward, no_grad

logger = structlog.get_logger(__name__)

FD_STEP = 1e-5
GRAD_TOLERANCE = 1e-4
# Smaller entries are compared on an absolute scale
RELATIVE_FLOOR = 1e-6


@dataclass
class GradcheckResult:
    name: str
    max_rel_error: float
    tolerance: float = GRAD_TOLERANCE

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error <= self.tolerance

    def to_dict(self) -> dict:
        return {"name": self.name, "max_rel_error": self.max_rel_error, "passed": self.passed}


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_FLOOR) -> float:
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def numerical_gradient(loss_fn: Callable[[], Tensor], param: Param, step: float = FD_STEP) -> np.ndarray:
    """Central differences of ``loss_fn`` with respect to every entry of ``param``"""
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            upper = loss_fn().item()
            flat[i] = original - step
            lower = loss_fn().item()
            flat[i] = original
            grad.reshape(-1)[i] = (upper - lower) / (2.0 * step)
    return grad


def check_gradients(
    loss_fn: Callable[[], Tensor], params: Sequence[Param], step: float = FD_STEP
) -> Dict[str, float]:
    """Max relative error between tape and finite-difference gradients, per param"""
    loss = loss_fn()
    backward(loss, params)
    analytic = {p.name: p.grad.copy() for p in params}
    return {p.name: relative_error(analytic[p.name], numerical_gradient(loss_fn, p, step)) for p in params}


def _away_from(values: np.ndarray, kinks: Sequence[float], margin: float = 0.05) -> np.ndarray:
    for kink in kinks:
        close = np.abs(values - kink) < margin
        values = np.where(close, kink + np.sign(values - kink + 1e-12) * margin * 2, values)
    return values


def run_op_suite(seed: int = 0) -> List[GradcheckResult]:
    """Check every differentiable op against central differences"""
    rng = np.random.default_rng(seed)

    def param(name, shape, kinks=()):
        return Param(name, _away_from(rng.normal(size=shape), kinks))

    def weigh(out: Tensor) -> Tensor:
        # Squared distance to a fixed random target makes every output entry matter
        target = np.random.default_rng(seed + 1).normal(size=out.shape)
        return ops.mse_loss(out, target)

    cases: Dict[str, Callable[[], tuple]] = {}

    a, b = param("a", (3, 4)), param("b", (4, 2))
    cases["matmul"] = lambda: (weigh(ops.matmul(a, b)), [a, b])

    qa, qb = param("qa", (2, 3, 4)), param("qb", (2, 4, 3))
    cases["matmul_batched"] = lambda: (weigh(ops.matmul(qa, qb)), [qa, qb])

    x, w, bias = param("x", (2, 3, 4)), param("w", (5, 4)), param("bias", (5,))
    cases["linear"] = lambda: (weigh(ops.linear(x, w, bias)), [x, w, bias])

    s, t = param("s", (3, 4)), param("t", (4,))
    cases["add"] = lambda: (weigh(ops.add(s, t)), [s, t])

    mix_w, mix_x, mix_y = Param("mix_w", np.array([0.3])), param("mix_x", (3, 4)), param("mix_y", (3, 4))
    cases["scalar_mix"] = lambda: (weigh(ops.scalar_mix(mix_w, mix_x, mix_y)), [mix_w, mix_x, mix_y])

    tr = param("tr", (2, 3, 4))
    cases["transpose_reshape"] = lambda: (weigh(ops.reshape(ops.transpose(tr, (2, 0, 1)), (4, 6))), [tr])

    c1, c2 = param("c1", (2, 3)), param("c2", (2, 2))
    cases["concat"] = lambda: (weigh(ops.concat([c1, c2], axis=1)), [c1, c2])

    sm = param("sm", (3, 5))
    cases["softmax_lastdim"] = lambda: (weigh(ops.softmax_lastdim(sm)), [sm])

    ln_x, gain, shift = param("ln_x", (4, 8)), param("gain", (8,)), param("shift", (8,))
    cases["layernorm"] = lambda: (weigh(ops.layernorm(ln_x, gain, shift)), [ln_x, gain, shift])

    hs = Param("hs", _away_from(rng.uniform(-5.0, 5.0, size=(4, 5)), (-3.0, 3.0)))
    cases["hardswish"] = lambda: (weigh(ops.hardswish(hs)), [hs])

    rl = param("rl", (4, 5), kinks=(0.0,))
    cases["relu"] = lambda: (weigh(ops.relu(rl)), [rl])

    neighbors = [[1, 2], [0], [0, 1, 3], [2, 4, 5], [3], [3, 4]]
    adjacency = ops.mean_aggregator(neighbors)
    seg = param("seg", (6, 2, 3))
    cases["segment_mean"] = lambda: (weigh(ops.segment_mean(seg, adjacency)), [seg])

    drop = param("drop", (4, 6))
    cases["dropout"] = lambda: (
        weigh(ops.dropout(drop, 0.3, np.random.default_rng(seed + 2), train=True)),
        [drop],
    )

    summed = param("summed", (3, 3))
    cases["scale_sum"] = lambda: (ops.sum_all(ops.scale(summed, 0.5)), [summed])

    pred, target = param("pred", (5, 3)), rng.normal(size=(5, 3))
    cases["mse_loss"] = lambda: (ops.mse_loss(pred, target), [pred])

    results = []
    for name, build in cases.items():
        _, params = build()
        errors = check_gradients(lambda: build()[0], params)
        result = GradcheckResult(name, max(errors.values()))
        logger.debug("gradcheck op", op=name, max_rel_error=result.max_rel_error)
        results.append(result)
    return results
