"""
Trial reports - per-trial metrics, aggregation and JSON/CSV artifacts

JSON files keep every field; CSV files carry one row per trial plus a mean and
a std row per variant, with stable column names.
"""

import csv
import hashlib
import json
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, Field, field_validator

from evaluation.metrics import DEFAULT_BOUNDARY_P

logger = structlog.get_logger(__name__)

REPORT_FORMAT_VERSION = 1


def config_fingerprint(*configs: BaseModel) -> str:
    """Short stable hash of the configs that shaped a run"""
    canonical = json.dumps([c.model_dump(mode="json") for c in configs], sort_keys=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class TrialReport(BaseModel):
    model_config = ConfigDict(extra="forbid")

    variant_flags: str = "graph+attention+lr_skip+localized"
    n_blocks: int
    alpha0: float
    trial: int
    seed: int
    rmse: float = Field(ge=0.0)
    boundary_rmse: Dict[int, float] = Field(default_factory=dict)
    alpha_values: List[float] = Field(default_factory=list)
    config_fingerprint: str = ""
    epochs: int = 0
    best_val_mse: float = 0.0
    wall_time_s: float = 0.0

    @field_validator("boundary_rmse")
    @classmethod
    def _non_negative(cls, value: Dict[int, float]) -> Dict[int, float]:
        for p, metric in value.items():
            if metric < 0:
                raise ValueError(f"boundary RMSE for p={p} is negative")
        return value

    @field_validator("alpha_values")
    @classmethod
    def _alphas_in_range(cls, value: List[float]) -> List[float]:
        if any(not 0.0 <= a <= 1.0 for a in value):
            raise ValueError(f"alpha values outside [0, 1]: {value}")
        return value


class MetricSummary(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mean: float
    std: float
    count: int


def summarize(values: Sequence[float]) -> MetricSummary:
    """Mean and population standard deviation"""
    array = np.asarray(values, dtype=np.float64)
    return MetricSummary(mean=float(array.mean()), std=float(array.std(ddof=0)), count=int(array.size))


def group_key(report: TrialReport) -> Tuple[str, int, float]:
    return report.variant_flags, report.n_blocks, report.alpha0


def aggregate(reports: Sequence[TrialReport]) -> List[dict]:
    """One summary row per (variant, n_blocks, alpha0), in first-seen order"""
    groups: Dict[Tuple[str, int, float], List[TrialReport]] = {}
    for report in reports:
        groups.setdefault(group_key(report), []).append(report)
    rows = []
    for (flags, n_blocks, alpha0), members in groups.items():
        ps = sorted(members[0].boundary_rmse)
        rows.append(
            {
                "variant_flags": flags,
                "n_blocks": n_blocks,
                "alpha0": alpha0,
                "trials": len(members),
                "rmse": summarize([r.rmse for r in members]).model_dump(),
                "boundary_rmse": {p: summarize([r.boundary_rmse[p] for r in members]).model_dump() for p in ps},
            }
        )
    return rows


def write_reports_json(reports: Sequence[TrialReport], path: Union[str, Path], extra: Optional[Mapping] = None) -> None:
    payload = {
        "format_version": REPORT_FORMAT_VERSION,
        "trials": [r.model_dump(mode="json") for r in reports],
        "summary": aggregate(reports),
    }
    if extra:
        payload.update(extra)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    logger.info("report written", path=str(path), trials=len(reports))


def read_reports_json(path: Union[str, Path]) -> List[TrialReport]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [TrialReport.model_validate(entry) for entry in payload["trials"]]


def csv_columns(boundary_ps: Iterable[int] = DEFAULT_BOUNDARY_P) -> List[str]:
    return ["variant_flags", "n_blocks", "alpha0", "trial", "rmse"] + [f"brmse_p{p}" for p in boundary_ps]


def write_reports_csv(
    reports: Sequence[TrialReport], path: Union[str, Path], boundary_ps: Sequence[int] = DEFAULT_BOUNDARY_P
) -> None:
    columns = csv_columns(boundary_ps)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for summary in aggregate(reports):
            members = [r for r in reports if group_key(r) == (summary["variant_flags"], summary["n_blocks"], summary["alpha0"])]
            base = {"variant_flags": summary["variant_flags"], "n_blocks": summary["n_blocks"], "alpha0": summary["alpha0"]}
            for report in members:
                row = dict(base, trial=report.trial, rmse=repr(report.rmse))
                row.update({f"brmse_p{p}": repr(report.boundary_rmse[p]) for p in boundary_ps})
                writer.writerow(row)
            for stat in ("mean", "std"):
                row = dict(base, trial=stat, rmse=repr(summary["rmse"][stat]))
                row.update({f"brmse_p{p}": repr(summary["boundary_rmse"][p][stat]) for p in boundary_ps})
                writer.writerow(row)
    logger.info("report table written", path=str(path), rows=len(reports))


def write_error_profile(profile: np.ndarray, path: Union[str, Path]) -> None:
    """Per-column mean absolute error for external plotting"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=["column", "mae"], lineterminator="\n")
        writer.writeheader()
        for column, mae in enumerate(profile):
            writer.writerow({"column": column, "mae": repr(float(mae))})
