"""
Trainer - feature normalisation, the epoch loop, checkpoints and multi-trial runs

This module:
- Normalises node features with statistics from the training split only
- Trains one model per split with seeded shuffling and dropout, keeping the
  checkpoint with the lowest validation MSE
- Aborts on non-finite losses or gradients, handing back the last good checkpoint
- Repeats train/evaluate over seeded permutation splits and reports each trial
"""

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import ValidationError

from common.errors import ConfigError, InsufficientDataError, NumericalError
from dataio.records import split_ids
from evaluation.metrics import DEFAULT_BOUNDARY_P, per_record_rmse, pooled_boundary_rmse, pooled_rmse
from evaluation.reports import TrialReport, config_fingerprint
from graphbuild.partition import GraphBatch, GraphSettings, TemporalGraphSequence, stack_sequences
from model.gritlp import ModelConfig, build_params, forward, param_shapes
from model.params import ModelParams
from numcore import ops
from numcore.tensor import Param, backward, no_grad
from training.optim import AdamState, LRSchedule, TrainConfig, adam_step

logger = structlog.get_logger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
PREDICT_CHUNK = 16
TRACE_COLUMNS = ["epoch", "train_mse", "val_mse", "lr"]


@dataclass(frozen=True)
class NormStats:
    """Per-feature mean and std (lat, lon, thickness) of the training split"""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_sequences(cls, sequences: Sequence[TemporalGraphSequence]) -> "NormStats":
        if not sequences:
            raise InsufficientDataError("normalisation statistics need at least one training sequence")
        features = np.concatenate([s.features().reshape(-1, 3) for s in sequences])
        mean = features.mean(axis=0)
        std = features.std(axis=0)
        std = np.where(np.isfinite(std) & (std > 0), std, 1.0)
        return cls(mean, std)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (features - self.mean) / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: dict) -> "NormStats":
        return cls(np.asarray(payload["mean"], dtype=np.float64), np.asarray(payload["std"], dtype=np.float64))


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: ModelParams
    norm_stats: NormStats
    graph: GraphSettings = field(default_factory=GraphSettings)
    train_config: TrainConfig = field(default_factory=TrainConfig)
    epoch: int = -1
    best_val_mse: Optional[float] = None
    rng_state: Optional[dict] = None

    @property
    def alpha_values(self) -> List[float]:
        return self.params.alpha_values()

    def to_payload(self) -> dict:
        return {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "config": self.model_config.model_dump(mode="json"),
            "train": self.train_config.model_dump(mode="json"),
            "graph": self.graph.model_dump(mode="json"),
            "params": self.params.to_payload(),
            "alpha_values": self.alpha_values,
            "norm_stats": self.norm_stats.to_dict(),
            "epoch": self.epoch,
            "best_val_mse": self.best_val_mse,
            "rng_state": self.rng_state,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "Checkpoint":
        if payload.get("format_version") != CHECKPOINT_FORMAT_VERSION:
            raise ConfigError(f"unsupported checkpoint format_version {payload.get('format_version')!r}")
        try:
            model_config = ModelConfig.model_validate(payload["config"])
            train_config = TrainConfig.model_validate(payload["train"])
            graph = GraphSettings.model_validate(payload["graph"])
        except ValidationError as e:
            raise ConfigError(f"checkpoint config invalid: {e}") from e
        except KeyError as e:
            raise ConfigError(f"checkpoint is missing {e.args[0]!r}") from e
        params = ModelParams.from_payload(payload["params"], param_shapes(model_config))
        return cls(
            model_config=model_config,
            params=params,
            norm_stats=NormStats.from_dict(payload["norm_stats"]),
            graph=graph,
            train_config=train_config,
            epoch=int(payload.get("epoch", -1)),
            best_val_mse=payload.get("best_val_mse"),
            rng_state=payload.get("rng_state"),
        )


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: List[Dict[str, float]]


def save_checkpoint(checkpoint: Checkpoint, path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint.to_payload(), sort_keys=True) + "\n", encoding="utf-8")
    logger.info("checkpoint saved", path=str(path), epoch=checkpoint.epoch)


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"checkpoint {path} is not valid JSON: {e.msg}") from e
    try:
        return Checkpoint.from_payload(payload)
    except KeyError as e:
        raise ConfigError(f"checkpoint {path} is missing {e.args[0]!r}") from e
    except (AttributeError, TypeError, ValueError) as e:
        raise ConfigError(f"checkpoint {path} is malformed: {e}") from e


def write_loss_trace(trace: Sequence[Dict[str, float]], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRACE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in trace:
            writer.writerow({key: repr(row[key]) if key != "epoch" else row[key] for key in TRACE_COLUMNS})


def batch_inputs(batch: GraphBatch, norm: NormStats) -> np.ndarray:
    """Normalised node-major features (N, k, 3) for ``forward``"""
    return norm.apply(np.transpose(batch.features, (1, 0, 2)))


def _check_sequences(sequences: Sequence[TemporalGraphSequence], config: ModelConfig) -> None:
    for seq in sequences:
        if len(seq.graphs) != config.k or seq.targets.shape[1] != config.m:
            raise ConfigError(
                f"sequence {seq.record_id!r} has k={len(seq.graphs)}, m={seq.targets.shape[1]}; "
                f"model expects k={config.k}, m={config.m}"
            )


def _mse(batch: GraphBatch, params: ModelParams, config: ModelConfig, norm: NormStats) -> float:
    with no_grad():
        pred = forward(batch_inputs(batch, norm), batch.adjacency, params, config)
    return float(np.mean((pred.data - batch.targets) ** 2))


def train_one(
    train_seqs: Sequence[TemporalGraphSequence],
    val_seqs: Sequence[TemporalGraphSequence],
    model_config: ModelConfig,
    train_config: TrainConfig,
    seed: int,
    graph: Optional[GraphSettings] = None,
) -> TrainResult:
    """Train one model and return its best-validation checkpoint with the loss trace.

    ``seed`` is split into independent streams for initialisation, dropout and
    the per-epoch shuffle, so identical calls give bit-identical results.
    """
    if not train_seqs:
        raise InsufficientDataError("training split is empty")
    _check_sequences(list(train_seqs) + list(val_seqs), model_config)
    init_seed, dropout_seed, shuffle_seed = np.random.SeedSequence(seed).spawn(3)
    dropout_rng = np.random.default_rng(dropout_seed)
    shuffle_rng = np.random.default_rng(shuffle_seed)

    norm = NormStats.from_sequences(train_seqs)
    params = build_params(model_config, np.random.default_rng(init_seed))
    adam = AdamState.for_params(params)
    schedule = LRSchedule(train_config, model_config.uses_attention())
    aggregator = model_config.aggregator
    val_batch = stack_sequences(val_seqs, aggregator) if val_seqs else None
    if val_batch is None:
        logger.warning("no validation records, selecting checkpoints on training loss")

    def checkpoint_from(values, epoch, best, rng_state) -> Checkpoint:
        snapshot = ModelParams([Param(name, v.copy()) for name, v in values.items()])
        return Checkpoint(
            model_config=model_config,
            params=snapshot,
            norm_stats=norm,
            graph=graph or GraphSettings(),
            train_config=train_config,
            epoch=epoch,
            best_val_mse=best if math.isfinite(best) else None,
            rng_state=rng_state,
        )

    best_val, best_epoch, best_values = math.inf, -1, params.snapshot()
    # dropout stream position that goes with best_values
    best_rng_state = dropout_rng.bit_generator.state
    trace: List[Dict[str, float]] = []
    logger.info(
        "training started",
        seed=seed,
        train_records=len(train_seqs),
        val_records=len(val_seqs),
        epochs=train_config.epochs,
        scheduler=schedule.kind,
    )

    for epoch in range(train_config.epochs):
        lr = schedule.lr_for(epoch)
        order = shuffle_rng.permutation(len(train_seqs))
        weighted_loss = 0.0
        for start in range(0, len(order), train_config.batch_size):
            members = [train_seqs[i] for i in order[start:start + train_config.batch_size]]
            batch = stack_sequences(members, aggregator)
            pred = forward(batch_inputs(batch, norm), batch.adjacency, params, model_config, dropout_rng, train=True)
            loss = ops.mse_loss(pred, batch.targets)
            if not math.isfinite(loss.item()):
                raise NumericalError(
                    f"training loss became non-finite at epoch {epoch}",
                    last_good_checkpoint=checkpoint_from(best_values, best_epoch, best_val, best_rng_state),
                )
            backward(loss, params)
            try:
                adam_step(adam, params, lr, train_config.weight_decay)
            except NumericalError as e:
                e.last_good_checkpoint = checkpoint_from(best_values, best_epoch, best_val, best_rng_state)
                raise
            weighted_loss += loss.item() * len(members)

        train_mse = weighted_loss / len(train_seqs)
        val_mse = _mse(val_batch, params, model_config, norm) if val_batch is not None else train_mse
        if not math.isfinite(val_mse):
            raise NumericalError(
                f"validation loss became non-finite at epoch {epoch}",
                last_good_checkpoint=checkpoint_from(best_values, best_epoch, best_val, best_rng_state),
            )
        trace.append({"epoch": epoch, "train_mse": train_mse, "val_mse": val_mse, "lr": lr})
        if val_mse < best_val:
            best_val, best_epoch, best_values = val_mse, epoch, params.snapshot()
            best_rng_state = dropout_rng.bit_generator.state
        schedule.end_epoch(epoch, val_mse)

        if epoch % train_config.log_every == 0 or epoch == train_config.epochs - 1:
            logger.info("epoch", epoch=epoch, train_mse=round(train_mse, 6), val_mse=round(val_mse, 6), lr=lr)

    checkpoint = checkpoint_from(best_values, best_epoch, best_val, best_rng_state)
    logger.info("training finished", best_epoch=best_epoch, best_val_mse=best_val, alphas=checkpoint.alpha_values)
    return TrainResult(checkpoint, trace)


def predict(checkpoint: Checkpoint, sequences: Sequence[TemporalGraphSequence]) -> List[np.ndarray]:
    """Eval-mode predictions (n x m, pixels) for each sequence"""
    _check_sequences(sequences, checkpoint.model_config)
    predictions: List[np.ndarray] = []
    for start in range(0, len(sequences), PREDICT_CHUNK):
        batch = stack_sequences(sequences[start:start + PREDICT_CHUNK], checkpoint.model_config.aggregator)
        with no_grad():
            out = forward(batch_inputs(batch, checkpoint.norm_stats), batch.adjacency, checkpoint.params, checkpoint.model_config)
        predictions.extend(batch.per_record(out.data))
    return predictions


def evaluate(
    checkpoint: Checkpoint,
    sequences: Sequence[TemporalGraphSequence],
    boundary_ps: Sequence[int] = DEFAULT_BOUNDARY_P,
    per_record: bool = False,
) -> Dict[str, object]:
    """RMSE (pooled, or averaged per record) and boundary RMSE for every usable p"""
    if not sequences:
        raise InsufficientDataError("nothing to evaluate")
    preds = predict(checkpoint, sequences)
    targets = [s.targets for s in sequences]
    width = min(s.n_nodes for s in sequences)
    usable = [p for p in boundary_ps if p <= width // 2]
    if len(usable) < len(boundary_ps):
        logger.warning("boundary widths skipped", skipped=[p for p in boundary_ps if p not in usable], width=width)
    return {
        "rmse": per_record_rmse(preds, targets) if per_record else pooled_rmse(preds, targets),
        "boundary_rmse": {p: pooled_boundary_rmse(preds, targets, p) for p in usable},
        "predictions": preds,
    }


def run_trials(
    sequences: Sequence[TemporalGraphSequence],
    model_config: ModelConfig,
    train_config: TrainConfig,
    graph: Optional[GraphSettings] = None,
    trials: Optional[int] = None,
    boundary_ps: Sequence[int] = DEFAULT_BOUNDARY_P,
    per_record: bool = False,
    variant_flags: str = "graph+attention+lr_skip+localized",
    out_dir: Optional[Union[str, Path]] = None,
) -> List[TrialReport]:
    """Train and test on ``trials`` seeded permutation splits (seeds seed+1 .. seed+trials)"""
    trials = trials or train_config.trials
    by_id = {s.record_id: s for s in sequences}
    ids = [s.record_id for s in sequences]
    fingerprint = config_fingerprint(model_config, train_config, graph or GraphSettings())
    reports = []
    for trial in range(1, trials + 1):
        trial_seed = train_config.seed + trial
        started = time.perf_counter()
        partition = split_ids(ids, trial_seed)
        result = train_one(
            [by_id[i] for i in partition.train],
            [by_id[i] for i in partition.val],
            model_config,
            train_config,
            trial_seed,
            graph,
        )
        metrics = evaluate(result.checkpoint, [by_id[i] for i in partition.test], boundary_ps, per_record)
        report = TrialReport(
            variant_flags=variant_flags,
            n_blocks=model_config.n_blocks,
            alpha0=model_config.alpha0,
            trial=trial,
            seed=trial_seed,
            rmse=metrics["rmse"],
            boundary_rmse=metrics["boundary_rmse"],
            alpha_values=result.checkpoint.alpha_values,
            config_fingerprint=fingerprint,
            epochs=len(result.trace),
            best_val_mse=result.checkpoint.best_val_mse or 0.0,
            wall_time_s=time.perf_counter() - started,
        )
        if out_dir is not None:
            trial_dir = Path(out_dir) / f"trial_{trial}"
            save_checkpoint(result.checkpoint, trial_dir / "checkpoint.json")
            write_loss_trace(result.trace, trial_dir / "loss_trace.csv")
            (trial_dir / "split.json").write_text(json.dumps(partition.to_dict(), indent=2) + "\n", encoding="utf-8")
        logger.info("trial finished", variant=variant_flags, trial=trial, rmse=report.rmse, alphas=report.alpha_values)
        reports.append(report)
    return reports
