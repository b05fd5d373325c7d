"""
Partitioned spatial graphs - sliding-window cliques over the radargram columns

Builds, for each record, a temporal sequence of k graphs (one per shallow
layer) that share one node set and one edge set: the union of complete
subgraphs over overlapping windows of consecutive columns. Edge weights come
from the haversine-style expression on the node coordinates.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
import scipy.sparse as sp
import structlog
from pydantic import BaseModel, ConfigDict, model_validator

from common.errors import ConfigError, InsufficientDataError
from dataio.records import ThicknessRecord
from numcore.ops import mean_aggregator

logger = structlog.get_logger(__name__)

ARCSIN_FLOOR = 1e-12
FEATURE_NAMES = ("lat", "lon", "thickness")


class PartitionSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    window_size: int = 5
    stride: int = 3

    @model_validator(mode="after")
    def _check_window(self) -> "PartitionSpec":
        if self.window_size < 2:
            raise ValueError(f"window_size must be at least 2, got {self.window_size}")
        if not 1 <= self.stride < self.window_size:
            raise ValueError(f"stride must satisfy 1 <= stride < window_size, got {self.stride}")
        return self

    @classmethod
    def fully_connected(cls, n: int) -> "PartitionSpec":
        """A single window spanning every node"""
        return cls(window_size=n, stride=max(1, n - 1))


class GraphSettings(BaseModel):
    """How records become graph sequences"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    l: int = 5
    m: int = 15
    window: int = 5
    stride: int = 3
    fully_connected: bool = False
    standard_haversine: bool = False
    min_layers: int = 20

    @model_validator(mode="after")
    def _check_layers(self) -> "GraphSettings":
        if self.l < 1 or self.m < 1:
            raise ValueError("l and m must be positive")
        PartitionSpec(window_size=self.window, stride=self.stride)
        return self

    def partition_for(self, n: int) -> PartitionSpec:
        if self.fully_connected:
            return PartitionSpec.fully_connected(n)
        return PartitionSpec(window_size=self.window, stride=self.stride)


@dataclass
class PartitionedGraph:
    n_nodes: int
    # (n, 3): latitude and longitude in degrees, thickness in pixels
    node_features: np.ndarray
    # (E, 2) undirected pairs with i < j, lexicographically sorted
    edges: np.ndarray
    edge_weights: np.ndarray
    starts: List[int]
    _adjacency: Dict[str, sp.csr_matrix] = field(default_factory=dict, repr=False, compare=False)

    def neighbor_lists(self) -> List[List[int]]:
        neighbors: List[List[int]] = [[] for _ in range(self.n_nodes)]
        for i, j in self.edges:
            neighbors[i].append(int(j))
            neighbors[j].append(int(i))
        return [sorted(n) for n in neighbors]

    def adjacency(self, aggregator: str = "mean") -> sp.csr_matrix:
        """Row-normalised neighbour matrix for the unweighted or weighted mean"""
        if aggregator not in self._adjacency:
            neighbors = self.neighbor_lists()
            weights = None
            if aggregator == "weighted-mean":
                lookup = {}
                for (i, j), w in zip(self.edges, self.edge_weights):
                    lookup[(int(i), int(j))] = lookup[(int(j), int(i))] = float(w)
                weights = [[lookup[(i, j)] for j in nbrs] for i, nbrs in enumerate(neighbors)]
            elif aggregator != "mean":
                raise ValueError(f"unknown aggregator {aggregator!r}")
            self._adjacency[aggregator] = mean_aggregator(neighbors, weights)
        return self._adjacency[aggregator]


@dataclass
class TemporalGraphSequence:
    record_id: str
    graphs: List[PartitionedGraph]
    # (n, m) deep-layer thicknesses in pixels
    targets: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.graphs[0].n_nodes

    def features(self) -> np.ndarray:
        """(k, n, 3) node features, one slice per shallow layer"""
        return np.stack([g.node_features for g in self.graphs])


@dataclass
class GraphBatch:
    """Several sequences stacked into one block-diagonal graph"""

    record_ids: List[str]
    features: np.ndarray
    adjacency: sp.csr_matrix
    targets: np.ndarray
    sizes: List[int]

    def per_record(self, values: np.ndarray) -> List[np.ndarray]:
        return np.split(values, np.cumsum(self.sizes)[:-1], axis=0)


def window_starts(n: int, spec: PartitionSpec) -> List[int]:
    """Window starts 0, S, 2S, ... plus a tail window anchored at n - W"""
    w, s = spec.window_size, spec.stride
    if n < w:
        raise InsufficientDataError(f"{n} nodes cannot hold a window of size {w}")
    starts = list(range(0, n - w + 1, s))
    if starts[-1] + w - 1 < n - 1:
        starts.append(n - w)
    return starts


def build_partitioned_edges(n: int, spec: PartitionSpec) -> np.ndarray:
    """Union of the complete graphs over every window, as sorted (i, j) pairs with i < j"""
    starts = window_starts(n, spec)
    local_i, local_j = np.triu_indices(spec.window_size, k=1)
    pairs = np.concatenate([np.stack([local_i + s, local_j + s], axis=1) for s in starts])
    return np.unique(pairs, axis=0)


def edge_weight(lat_i, lon_i, lat_j, lon_j, standard_haversine: bool = False):
    """Inverse of twice the arcsine of the haversine term (coordinates in degrees).

    The default keeps the term under the arcsine without a square root and
    without an Earth radius; ``standard_haversine`` inserts the square root.
    The arcsine argument is clamped to [1e-12, 1].
    """
    phi_i, phi_j = np.radians(lat_i), np.radians(lat_j)
    d_phi = phi_j - phi_i
    d_lambda = np.radians(lon_j) - np.radians(lon_i)
    h = np.sin(d_phi / 2.0) ** 2 + np.cos(phi_i) * np.cos(phi_j) * np.sin(d_lambda / 2.0) ** 2
    if standard_haversine:
        h = np.sqrt(h)
    return 1.0 / (2.0 * np.arcsin(np.clip(h, ARCSIN_FLOOR, 1.0)))


def build_sequence(
    record: ThicknessRecord,
    l: int = 5,
    m: int = 15,
    spec: PartitionSpec = PartitionSpec(),
    standard_haversine: bool = False,
) -> TemporalGraphSequence:
    """Graphs for the top ``l`` layers and targets from the next ``m`` layers"""
    needed = l + m
    if record.n_layers < needed or not np.all(np.isfinite(record.thickness[:needed])):
        raise InsufficientDataError(
            f"record {record.id!r} needs {needed} complete layers, has {record.complete_layers()}"
        )
    n = record.width
    starts = window_starts(n, spec)
    edges = build_partitioned_edges(n, spec)
    weights = edge_weight(
        record.lat[edges[:, 0]], record.lon[edges[:, 0]], record.lat[edges[:, 1]], record.lon[edges[:, 1]],
        standard_haversine=standard_haversine,
    )
    graphs = [
        PartitionedGraph(
            n_nodes=n,
            node_features=np.stack([record.lat, record.lon, record.thickness[t]], axis=1),
            edges=edges,
            edge_weights=weights,
            starts=starts,
        )
        for t in range(l)
    ]
    # Structure is shared, so one adjacency cache serves every graph
    for graph in graphs[1:]:
        graph._adjacency = graphs[0]._adjacency
    targets = record.thickness[l:needed].T.copy()
    return TemporalGraphSequence(record.id, graphs, targets)


def build_sequences(records: Sequence[ThicknessRecord], settings: GraphSettings) -> List[TemporalGraphSequence]:
    sequences = [
        build_sequence(r, settings.l, settings.m, settings.partition_for(r.width), settings.standard_haversine)
        for r in records
    ]
    logger.info(
        "graph sequences built",
        count=len(sequences),
        l=settings.l,
        m=settings.m,
        window=settings.window,
        stride=settings.stride,
        fully_connected=settings.fully_connected,
    )
    return sequences


def stack_sequences(sequences: Sequence[TemporalGraphSequence], aggregator: str = "mean") -> GraphBatch:
    """Stack node sets so a batch runs as a single forward pass"""
    if not sequences:
        raise InsufficientDataError("cannot batch an empty list of sequences")
    features = np.concatenate([s.features() for s in sequences], axis=1)
    adjacency = sp.block_diag([s.graphs[0].adjacency(aggregator) for s in sequences], format="csr")
    targets = np.concatenate([s.targets for s in sequences], axis=0)
    return GraphBatch([s.record_id for s in sequences], features, adjacency, targets, [s.n_nodes for s in sequences])


def save_graph_cache(sequence: TemporalGraphSequence, path: Union[str, Path]) -> None:
    graph = sequence.graphs[0]
    payload = {
        "id": sequence.record_id,
        "starts": graph.starts,
        "edges": graph.edges.tolist(),
        "weights": graph.edge_weights.tolist(),
        "features_by_layer": [g.node_features.tolist() for g in sequence.graphs],
        "targets": sequence.targets.tolist(),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_graph_cache(path: Union[str, Path]) -> TemporalGraphSequence:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        edges = np.asarray(payload["edges"], dtype=np.int64).reshape(-1, 2)
        weights = np.asarray(payload["weights"], dtype=np.float64)
        shared: Dict[str, sp.csr_matrix] = {}
        graphs = []
        for features in payload["features_by_layer"]:
            features = np.asarray(features, dtype=np.float64)
            graphs.append(
                PartitionedGraph(features.shape[0], features, edges, weights, list(payload["starts"]), shared)
            )
        targets = np.asarray(payload["targets"], dtype=np.float64)
        record_id = str(payload["id"])
    except json.JSONDecodeError as e:
        raise ConfigError(f"graph cache {path} is not valid JSON: {e.msg}") from e
    except KeyError as e:
        raise ConfigError(f"graph cache {path} is missing {e.args[0]!r}") from e
    except (TypeError, ValueError, IndexError) as e:
        raise ConfigError(f"graph cache {path} is malformed: {e}") from e
    if not graphs or targets.ndim != 2 or targets.shape[0] != graphs[0].n_nodes:
        raise ConfigError(f"graph cache {path} holds no layers or mismatched targets")
    return TemporalGraphSequence(record_id, graphs, targets)


def write_graph_dir(sequences: Sequence[TemporalGraphSequence], out_dir: Union[str, Path]) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for sequence in sequences:
        path = out_dir / f"{sequence.record_id}.json"
        save_graph_cache(sequence, path)
        paths.append(path)
    logger.info("graph cache written", directory=str(out_dir), count=len(paths))
    return paths


def read_graph_dir(directory: Union[str, Path]) -> List[TemporalGraphSequence]:
    paths = sorted(Path(directory).glob("*.json"))
    if not paths:
        raise InsufficientDataError(f"no graph cache files in {directory}")
    return [load_graph_cache(p) for p in paths]
