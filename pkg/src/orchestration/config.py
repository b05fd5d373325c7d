"""
Run configuration - one validated document for model, training, data, graph and evaluation

Config files are JSON or YAML (``yaml.safe_load`` reads both). Command-line
flags are merged over the file values before the whole document is validated
once, so an invalid value is reported with its field path.
"""

from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

import structlog
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from common.errors import ConfigError
from evaluation.metrics import DEFAULT_BOUNDARY_P
from graphbuild.partition import GraphSettings
from model.gritlp import ModelConfig
from training.optim import TrainConfig

logger = structlog.get_logger(__name__)

SECTIONS = ("model", "train", "data", "graph", "eval")


class DataPaths(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    records: Optional[str] = None
    graphs: Optional[str] = None


class EvalSettings(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    boundary_ps: List[int] = Field(default_factory=lambda: list(DEFAULT_BOUNDARY_P))
    per_record_rmse: bool = False
    error_profile: bool = True

    @model_validator(mode="after")
    def _check_ps(self) -> "EvalSettings":
        if any(p < 1 for p in self.boundary_ps):
            raise ValueError(f"boundary widths must be positive, got {self.boundary_ps}")
        return self


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    model: ModelConfig = Field(default_factory=ModelConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    data: DataPaths = Field(default_factory=DataPaths)
    graph: GraphSettings = Field(default_factory=GraphSettings)
    eval: EvalSettings = Field(default_factory=EvalSettings)

    @model_validator(mode="after")
    def _check_shapes_agree(self) -> "RunConfig":
        if self.model.k != self.graph.l:
            raise ValueError(f"model.k={self.model.k} must equal graph.l={self.graph.l}")
        if self.model.m != self.graph.m:
            raise ValueError(f"model.m={self.model.m} must equal graph.m={self.graph.m}")
        return self


def config_error(err: ValidationError, source: str = "config") -> ConfigError:
    """Field-level message naming every offending path"""
    problems = []
    for detail in err.errors():
        path = ".".join(str(part) for part in detail["loc"]) or "<root>"
        problems.append(f"{path}: {detail['msg']}")
    return ConfigError(f"invalid {source}: " + "; ".join(problems))


def read_config_file(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        document = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config file {path} is not valid JSON or YAML: {e}") from e
    if document is None:
        return {}
    if not isinstance(document, dict):
        raise ConfigError(f"config file {path} must hold a mapping, got {type(document).__name__}")
    return document


def merge_overrides(document: Mapping[str, Any], overrides: Mapping[str, Mapping[str, Any]]) -> Dict[str, Any]:
    """Section-wise merge; ``None`` override values mean "not given" and are skipped"""
    merged: Dict[str, Any] = {key: value for key, value in document.items()}
    for section, values in overrides.items():
        given = {k: v for k, v in values.items() if v is not None}
        if not given:
            continue
        base = merged.get(section) or {}
        if not isinstance(base, dict):
            raise ConfigError(f"config section {section!r} must be a mapping")
        merged[section] = {**base, **given}
    return merged


def resolve_run_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Mapping[str, Mapping[str, Any]]] = None
) -> RunConfig:
    document = read_config_file(path) if path is not None else {}
    merged = merge_overrides(document, overrides or {})
    try:
        config = RunConfig.model_validate(merged)
    except ValidationError as e:
        raise config_error(e, source=f"config {path}" if path is not None else "config") from e
    logger.debug("config resolved", source=str(path) if path is not None else "defaults")
    return config


def dump_run_config(config: RunConfig, path: Union[str, Path]) -> None:
    """Write the resolved config next to run artifacts"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.model_dump(mode="json"), sort_keys=True), encoding="utf-8")
