"""
Thickness prediction metrics

Predictions and targets are per record (n nodes x m layers) in pixels.
``boundary_rmse`` works on the layer-major view (m x w), so callers holding
node-major arrays pass the transpose.
"""

from typing import Sequence

import numpy as np

from common.errors import ConfigError, DimensionError

DEFAULT_BOUNDARY_P = (1, 2, 5, 10)


def _check_pair(pred: np.ndarray, target: np.ndarray) -> None:
    if pred.shape != target.shape:
        raise DimensionError(f"prediction {pred.shape} and target {target.shape} differ")


def rmse(pred, target) -> float:
    pred, target = np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64)
    _check_pair(pred, target)
    return float(np.sqrt(np.mean((pred - target) ** 2)))


def _boundary_errors(pred: np.ndarray, target: np.ndarray, p: int) -> np.ndarray:
    _check_pair(pred, target)
    if pred.ndim != 2:
        raise DimensionError(f"boundary metrics need (m, w) arrays, got {pred.shape}")
    width = pred.shape[1]
    if not 1 <= p <= width // 2:
        raise ConfigError(f"boundary width p={p} must lie in [1, {width // 2}] for {width} columns")
    diff = pred - target
    return np.concatenate([diff[:, :p], diff[:, width - p:]], axis=1)


def boundary_rmse(pred, target, p: int) -> float:
    """RMSE over the leftmost and rightmost ``p`` columns of every layer (m x 2p terms)"""
    errors = _boundary_errors(np.asarray(pred, dtype=np.float64), np.asarray(target, dtype=np.float64), p)
    return float(np.sqrt(np.mean(errors**2)))


def pooled_rmse(preds: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    """RMSE over every entry of every record, pooled before the root"""
    for pred, target in zip(preds, targets):
        _check_pair(pred, target)
    squared = np.concatenate([((p - t) ** 2).reshape(-1) for p, t in zip(preds, targets)])
    return float(np.sqrt(np.mean(squared)))


def per_record_rmse(preds: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    """Mean of the per-record RMSEs"""
    return float(np.mean([rmse(p, t) for p, t in zip(preds, targets)]))


def pooled_boundary_rmse(preds: Sequence[np.ndarray], targets: Sequence[np.ndarray], p: int) -> float:
    """Boundary RMSE pooled over records; inputs are node-major (n x m)"""
    errors = np.concatenate(
        [_boundary_errors(pr.T, tg.T, p).reshape(-1) for pr, tg in zip(preds, targets)]
    )
    return float(np.sqrt(np.mean(errors**2)))


def error_profile(preds: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> np.ndarray:
    """Mean absolute error per column, averaged over records and layers"""
    widths = {p.shape[0] for p in preds}
    if len(widths) != 1:
        raise DimensionError(f"error profile needs records of one width, got {sorted(widths)}")
    stacked = np.stack([np.abs(p - t) for p, t in zip(preds, targets)])
    return stacked.mean(axis=(0, 2))
