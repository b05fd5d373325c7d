"""
Radargram records - file format, validation, thickness, filtering and splits

A record holds per-column geocoordinates and the traced layer boundaries of
one radargram. Missing boundary values are NaN in memory and null on disk.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import structlog
from pydantic import BaseModel, ConfigDict, ValidationError

from common.errors import InsufficientDataError, RecordParseError, RecordValidationError

logger = structlog.get_logger(__name__)

DEFAULT_WIDTH = 256
DEFAULT_MIN_LAYERS = 20
SPLIT_RATIO = (3, 1, 1)


class _RadargramLine(BaseModel):
    """Schema of one JSON Lines entry"""

    model_config = ConfigDict(extra="forbid")

    id: str
    width: int
    lat: List[float]
    lon: List[float]
    boundaries: List[List[Optional[float]]]


@dataclass(frozen=True)
class RadargramRecord:
    id: str
    width: int
    lat: np.ndarray
    lon: np.ndarray
    # (L, width) boundary rows in pixels, top to bottom; NaN marks a missing value
    boundaries: np.ndarray

    def validate(self) -> "RadargramRecord":
        if self.width < 1:
            raise RecordValidationError(f"width must be positive, got {self.width}", self.id)
        for name, coords, limit in (("lat", self.lat, 90.0), ("lon", self.lon, 180.0)):
            if coords.shape != (self.width,):
                raise RecordValidationError(f"{name} has {coords.size} entries, expected {self.width}", self.id)
            if not np.all(np.isfinite(coords)) or np.any(np.abs(coords) > limit):
                raise RecordValidationError(f"{name} values outside [-{limit:g}, {limit:g}]", self.id)
        if self.boundaries.ndim != 2 or self.boundaries.shape[1] != self.width:
            raise RecordValidationError(
                f"boundaries have shape {self.boundaries.shape}, expected (L, {self.width})", self.id
            )
        if np.any(np.isinf(self.boundaries)):
            raise RecordValidationError("boundaries contain infinite values", self.id)
        for column in range(self.width):
            present = self.boundaries[:, column]
            present = present[~np.isnan(present)]
            if np.any(np.diff(present) <= 0):
                raise RecordValidationError(f"boundaries not strictly increasing at column {column}", self.id)
        return self


@dataclass(frozen=True)
class ThicknessRecord:
    id: str
    width: int
    lat: np.ndarray
    lon: np.ndarray
    # (L, width) pixel thicknesses; NaN where either bounding boundary is missing
    thickness: np.ndarray

    @property
    def n_layers(self) -> int:
        return self.thickness.shape[0]

    def complete_layers(self) -> int:
        """Number of leading layers with a value at every column"""
        complete = np.all(np.isfinite(self.thickness), axis=1)
        return int(np.argmin(complete)) if not np.all(complete) else self.n_layers


@dataclass(frozen=True)
class DatasetSplit:
    seed: int
    train: List[str] = field(default_factory=list)
    val: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test}

    @classmethod
    def from_dict(cls, payload: dict) -> "DatasetSplit":
        return cls(int(payload["seed"]), list(payload["train"]), list(payload["val"]), list(payload["test"]))


def _record_from_line(entry: _RadargramLine) -> RadargramRecord:
    if len(entry.boundaries) < 2:
        raise RecordValidationError(f"needs at least 2 boundary rows, got {len(entry.boundaries)}", entry.id)
    for layer, row in enumerate(entry.boundaries):
        if len(row) != entry.width:
            raise RecordValidationError(f"boundary {layer} has {len(row)} entries, expected {entry.width}", entry.id)
    boundaries = np.array(
        [[np.nan if v is None else v for v in row] for row in entry.boundaries], dtype=np.float64
    ).reshape(len(entry.boundaries), -1)
    record = RadargramRecord(
        id=entry.id,
        width=entry.width,
        lat=np.asarray(entry.lat, dtype=np.float64),
        lon=np.asarray(entry.lon, dtype=np.float64),
        boundaries=boundaries,
    )
    return record.validate()


def load_records(path: Union[str, Path]) -> List[RadargramRecord]:
    """Parse and validate a JSON Lines radargram file"""
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                entry = _RadargramLine.model_validate(json.loads(line))
            except json.JSONDecodeError as e:
                raise RecordParseError(f"invalid JSON ({e.msg})", line_number) from e
            except ValidationError as e:
                first = e.errors()[0]
                location = ".".join(str(part) for part in first["loc"])
                raise RecordParseError(f"field {location}: {first['msg']}", line_number) from e
            records.append(_record_from_line(entry))
    logger.info("records loaded", path=str(path), count=len(records))
    return records


def _record_to_line(record: RadargramRecord) -> dict:
    return {
        "id": record.id,
        "width": record.width,
        "lat": record.lat.tolist(),
        "lon": record.lon.tolist(),
        "boundaries": [[None if np.isnan(v) else float(v) for v in row] for row in record.boundaries],
    }


def save_records(records: Iterable[RadargramRecord], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(path, "w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(_record_to_line(record)) + "\n")
            count += 1
    logger.info("records saved", path=str(path), count=count)


def to_thickness(record: RadargramRecord) -> ThicknessRecord:
    """Layer i thickness is boundary i+1 minus boundary i, column by column"""
    if record.boundaries.shape[0] < 2:
        raise InsufficientDataError(f"record {record.id!r} has fewer than 2 boundaries")
    # NaN propagates: a missing boundary marks both adjacent layers missing
    thickness = np.diff(record.boundaries, axis=0)
    return ThicknessRecord(record.id, record.width, record.lat, record.lon, thickness)


def from_thickness(record: ThicknessRecord, top_offset: Union[float, np.ndarray] = 0.0) -> RadargramRecord:
    """Rebuild boundaries by cumulative sums from a top offset"""
    top = np.broadcast_to(np.asarray(top_offset, dtype=np.float64), (record.width,))
    boundaries = np.vstack([top, top + np.cumsum(record.thickness, axis=0)])
    return RadargramRecord(record.id, record.width, record.lat, record.lon, boundaries)


def filter_complete(records: Sequence[ThicknessRecord], min_layers: int = DEFAULT_MIN_LAYERS) -> List[ThicknessRecord]:
    """Keep records whose top ``min_layers`` layers are complete at every column"""
    kept = [r for r in records if r.n_layers >= min_layers and r.complete_layers() >= min_layers]
    dropped = len(records) - len(kept)
    if dropped:
        logger.warning("incomplete records dropped", dropped=dropped, kept=len(kept), min_layers=min_layers)
    return kept


def split(records: Sequence[Union[ThicknessRecord, RadargramRecord]], seed: int) -> DatasetSplit:
    """Seeded permutation followed by a contiguous 3:1:1 partition"""
    return split_ids([r.id for r in records], seed)


def split_ids(record_ids: Sequence[str], seed: int) -> DatasetSplit:
    n = len(record_ids)
    if n < sum(SPLIT_RATIO):
        raise InsufficientDataError(f"need at least {sum(SPLIT_RATIO)} records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    ids = [record_ids[i] for i in order]
    n_train = int(round(n * SPLIT_RATIO[0] / sum(SPLIT_RATIO)))
    n_val = int(round(n * SPLIT_RATIO[1] / sum(SPLIT_RATIO)))
    return DatasetSplit(seed, ids[:n_train], ids[n_train:n_train + n_val], ids[n_train + n_val:])
