"""
Experiments - component ablation grid and the mixing-weight sensitivity sweep

Each variant switches components of the full model off and is trained and
evaluated with the same multi-trial protocol, so rows differ only
structurally.
"""

from itertools import product
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import structlog
from pydantic import BaseModel, ConfigDict, model_validator

from dataio.records import ThicknessRecord
from evaluation.metrics import DEFAULT_BOUNDARY_P
from evaluation.reports import TrialReport
from graphbuild.partition import GraphSettings, TemporalGraphSequence, build_sequences
from model.gritlp import ModelConfig
from training.optim import TrainConfig
from training.trainer import run_trials

logger = structlog.get_logger(__name__)

DEFAULT_ALPHA_GRID = (0.25, 0.5, 0.75)
DEFAULT_BLOCK_GRID = (1, 8)


class AblationVariant(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    graph: bool = True
    attention: bool = True
    lr_skip: bool = True
    localized: bool = True

    @model_validator(mode="after")
    def _check_meaningful(self) -> "AblationVariant":
        if not (self.graph or self.attention):
            raise ValueError("a variant needs the graph encoder or the attention blocks")
        if self.lr_skip and not self.attention:
            raise ValueError("the long-range skip mixes attention block outputs and needs attention")
        return self

    @property
    def flags(self) -> str:
        enabled = [name for name in ("graph", "attention", "lr_skip", "localized") if getattr(self, name)]
        return "+".join(enabled)

    @classmethod
    def from_flags(cls, flags: str) -> "AblationVariant":
        names = {name for name in flags.split("+") if name}
        unknown = names - {"graph", "attention", "lr_skip", "localized"}
        if unknown:
            raise ValueError(f"unknown variant components {sorted(unknown)}")
        return cls(**{name: name in names for name in ("graph", "attention", "lr_skip", "localized")})


def ablation_grid() -> List[AblationVariant]:
    """Every meaningful on/off combination of the four components (ten variants)"""
    variants = []
    for graph, attention, lr_skip, localized in product((True, False), repeat=4):
        if not (graph or attention) or (lr_skip and not attention):
            continue
        variants.append(AblationVariant(graph=graph, attention=attention, lr_skip=lr_skip, localized=localized))
    return variants


def variant_configs(
    variant: AblationVariant, base_model: ModelConfig, base_graph: GraphSettings
) -> Tuple[ModelConfig, GraphSettings]:
    model_updates: Dict[str, object] = {"use_graph": variant.graph, "use_lr_skip": variant.lr_skip}
    if not variant.attention:
        model_updates["n_blocks"] = 0
    model = ModelConfig.model_validate({**base_model.model_dump(), **model_updates})
    graph = GraphSettings.model_validate({**base_graph.model_dump(), "fully_connected": not variant.localized})
    return model, graph


def variant_of(model: ModelConfig, graph: GraphSettings) -> AblationVariant:
    """Which components a trained configuration actually uses"""
    attention = model.uses_attention()
    return AblationVariant(
        graph=model.use_graph,
        attention=attention,
        lr_skip=attention and model.use_lr_skip,
        localized=not graph.fully_connected,
    )


def run_ablation(
    records: Sequence[ThicknessRecord],
    base_model: ModelConfig,
    train_config: TrainConfig,
    base_graph: GraphSettings,
    variants: Optional[Sequence[AblationVariant]] = None,
    trials: Optional[int] = None,
    boundary_ps: Sequence[int] = DEFAULT_BOUNDARY_P,
    per_record: bool = False,
    out_dir: Optional[Union[str, Path]] = None,
) -> List[TrialReport]:
    """Train and evaluate every variant over the trial protocol"""
    variants = list(variants) if variants is not None else ablation_grid()
    sequence_cache: Dict[GraphSettings, List[TemporalGraphSequence]] = {}
    reports: List[TrialReport] = []
    for variant in variants:
        model, graph = variant_configs(variant, base_model, base_graph)
        if graph not in sequence_cache:
            sequence_cache[graph] = build_sequences(records, graph)
        logger.info("ablation variant started", variant=variant.flags, n_blocks=model.n_blocks)
        reports.extend(
            run_trials(
                sequence_cache[graph],
                model,
                train_config,
                graph,
                trials=trials,
                boundary_ps=boundary_ps,
                per_record=per_record,
                variant_flags=variant.flags,
                out_dir=Path(out_dir) / variant.flags if out_dir is not None else None,
            )
        )
    return reports


def run_alpha_sweep(
    sequences: Sequence[TemporalGraphSequence],
    base_model: ModelConfig,
    train_config: TrainConfig,
    graph: GraphSettings,
    block_counts: Sequence[int] = DEFAULT_BLOCK_GRID,
    alpha0s: Sequence[float] = DEFAULT_ALPHA_GRID,
    trials: Optional[int] = None,
    boundary_ps: Sequence[int] = DEFAULT_BOUNDARY_P,
    per_record: bool = False,
    out_dir: Optional[Union[str, Path]] = None,
) -> List[TrialReport]:
    """Full model trained for every (n_blocks, alpha0) pair"""
    reports: List[TrialReport] = []
    for n_blocks, alpha0 in product(block_counts, alpha0s):
        model = ModelConfig.model_validate({**base_model.model_dump(), "n_blocks": n_blocks, "alpha0": alpha0})
        logger.info("alpha sweep point started", n_blocks=n_blocks, alpha0=alpha0)
        reports.extend(
            run_trials(
                sequences,
                model,
                train_config,
                graph,
                trials=trials,
                boundary_ps=boundary_ps,
                per_record=per_record,
                out_dir=Path(out_dir) / f"n{n_blocks}_alpha{alpha0}" if out_dir is not None else None,
            )
        )
    return reports
