"""
Test suite for partitioned graph construction
"""

import itertools
import json

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from common.errors import ConfigError, InsufficientDataError
from dataio.records import ThicknessRecord, to_thickness
from dataio.synth import synth_generate
from graphbuild.partition import (
    GraphSettings,
    PartitionSpec,
    build_partitioned_edges,
    build_sequence,
    build_sequences,
    edge_weight,
    load_graph_cache,
    read_graph_dir,
    save_graph_cache,
    stack_sequences,
    window_starts,
    write_graph_dir,
)


def _naive_edges(n, spec):
    starts = window_starts(n, spec)
    edges = set()
    for i, j in itertools.combinations(range(n), 2):
        if any(s <= i and j <= s + spec.window_size - 1 for s in starts):
            edges.add((i, j))
    return sorted(edges)


@pytest.fixture
def thick_records():
    return [to_thickness(r) for r in synth_generate(count=3, seed=5, width=24)]


class TestWindows:
    def test_tail_window_is_anchored_at_the_end(self):
        assert window_starts(12, PartitionSpec(window_size=5, stride=3)) == [0, 3, 6, 7]

    def test_seven_nodes(self):
        assert window_starts(7, PartitionSpec(window_size=5, stride=3)) == [0, 2]

    def test_exact_fit_adds_no_tail(self):
        assert window_starts(11, PartitionSpec(window_size=5, stride=3)) == [0, 3, 6]

    def test_too_few_nodes(self):
        with pytest.raises(InsufficientDataError):
            window_starts(4, PartitionSpec(window_size=5, stride=3))

    @pytest.mark.parametrize("window,stride", [(5, 0), (5, 5), (1, 1)])
    def test_invalid_spec(self, window, stride):
        with pytest.raises(ValueError):
            PartitionSpec(window_size=window, stride=stride)


class TestEdges:
    def test_seven_nodes_have_seventeen_edges(self):
        edges = build_partitioned_edges(7, PartitionSpec(window_size=5, stride=3))
        assert len(edges) == 17
        assert (edges[:, 0] < edges[:, 1]).all()

    def test_matches_naive_oracle(self):
        for n in range(5, 65):
            for window in (2, 3, 5, 8):
                if n < window:
                    continue
                for stride in range(1, window):
                    spec = PartitionSpec(window_size=window, stride=stride)
                    edges = build_partitioned_edges(n, spec)
                    assert [tuple(e) for e in edges.tolist()] == _naive_edges(n, spec)

    def test_locality(self):
        n, spec = 40, PartitionSpec(window_size=5, stride=3)
        present = {tuple(e) for e in build_partitioned_edges(n, spec).tolist()}
        for i, j in itertools.combinations(range(n), 2):
            if j - i >= spec.window_size:
                assert (i, j) not in present
            if j - i <= spec.window_size - spec.stride:
                assert (i, j) in present

    def test_every_node_has_a_neighbor(self):
        edges = build_partitioned_edges(23, PartitionSpec(window_size=5, stride=3))
        assert set(np.unique(edges)) == set(range(23))

    def test_fully_connected_spec(self):
        edges = build_partitioned_edges(6, PartitionSpec.fully_connected(6))
        assert len(edges) == 15


class TestEdgeWeight:
    def test_identical_points_hit_the_clamp(self):
        assert edge_weight(70.0, -45.0, 70.0, -45.0) == pytest.approx(5.0e11, rel=1e-9)

    def test_nearby_points(self):
        assert edge_weight(70.0, -45.0, 70.0, -44.99) == pytest.approx(5.612e8, rel=1e-3)

    def test_symmetric_and_vectorized(self):
        lat_i, lon_i = np.array([70.0, 71.0]), np.array([-45.0, -40.0])
        lat_j, lon_j = np.array([70.2, 71.5]), np.array([-44.0, -41.0])
        forward = edge_weight(lat_i, lon_i, lat_j, lon_j)
        assert forward.shape == (2,)
        assert_allclose(forward, edge_weight(lat_j, lon_j, lat_i, lon_i))

    def test_standard_haversine_is_smaller(self):
        plain = edge_weight(70.0, -45.0, 70.0, -44.99)
        assert edge_weight(70.0, -45.0, 70.0, -44.99, standard_haversine=True) < plain


class TestBuildSequence:
    def test_shapes_and_shared_structure(self, thick_records):
        seq = build_sequence(thick_records[0], l=5, m=15)
        assert len(seq.graphs) == 5
        assert seq.targets.shape == (24, 15)
        assert seq.features().shape == (5, 24, 3)
        for graph in seq.graphs[1:]:
            assert graph.edges is seq.graphs[0].edges
            assert_array_equal(graph.node_features[:, :2], seq.graphs[0].node_features[:, :2])

    def test_features_and_targets_come_from_the_right_layers(self, thick_records):
        record = thick_records[0]
        seq = build_sequence(record, l=5, m=15)
        assert_array_equal(seq.graphs[2].node_features[:, 2], record.thickness[2])
        assert_array_equal(seq.targets[:, 0], record.thickness[5])
        assert_array_equal(seq.targets[:, 14], record.thickness[19])

    def test_incomplete_record_is_rejected(self, thick_records):
        record = thick_records[0]
        thickness = record.thickness.copy()
        thickness[17, 4] = np.nan
        broken = ThicknessRecord(record.id, record.width, record.lat, record.lon, thickness)
        with pytest.raises(InsufficientDataError):
            build_sequence(broken, l=5, m=15)

    def test_weighted_adjacency_rows_are_normalised(self, thick_records):
        adjacency = build_sequence(thick_records[0]).graphs[0].adjacency("weighted-mean")
        assert_allclose(np.asarray(adjacency.sum(axis=1)).ravel(), 1.0)

    def test_settings_drive_the_partition(self, thick_records):
        settings = GraphSettings(window=4, stride=2)
        sequences = build_sequences(thick_records, settings)
        assert len(sequences[0].graphs[0].edges) == len(build_partitioned_edges(24, PartitionSpec(window_size=4, stride=2)))
        dense = build_sequences(thick_records, GraphSettings(fully_connected=True))
        assert len(dense[0].graphs[0].edges) == 24 * 23 // 2


class TestBatching:
    def test_block_diagonal_stack(self, thick_records):
        sequences = build_sequences(thick_records, GraphSettings())
        batch = stack_sequences(sequences)
        assert batch.features.shape == (5, 72, 3)
        assert batch.adjacency.shape == (72, 72)
        assert batch.targets.shape == (72, 15)
        # no edges cross record boundaries
        assert batch.adjacency[:24, 24:].nnz == 0
        pieces = batch.per_record(batch.targets)
        assert_array_equal(pieces[1], sequences[1].targets)

    def test_empty_batch(self):
        with pytest.raises(InsufficientDataError):
            stack_sequences([])


class TestGraphCache:
    def test_cache_reproduces_the_sequence(self, tmp_path, thick_records):
        seq = build_sequence(thick_records[1])
        path = tmp_path / "graph.json"
        save_graph_cache(seq, path)
        loaded = load_graph_cache(path)
        assert loaded.record_id == seq.record_id
        assert_array_equal(loaded.graphs[0].edges, seq.graphs[0].edges)
        assert_array_equal(loaded.features(), seq.features())
        assert_array_equal(loaded.targets, seq.targets)

    def test_directory_round_trip(self, tmp_path, thick_records):
        sequences = build_sequences(thick_records, GraphSettings())
        write_graph_dir(sequences, tmp_path / "graphs")
        assert [s.record_id for s in read_graph_dir(tmp_path / "graphs")] == sorted(s.record_id for s in sequences)

    def test_empty_directory(self, tmp_path):
        with pytest.raises(InsufficientDataError):
            read_graph_dir(tmp_path)

    @pytest.mark.parametrize("drop", ["targets", "edges", "features_by_layer", "id"])
    def test_missing_field_names_the_file(self, tmp_path, thick_records, drop):
        path = tmp_path / "graph.json"
        save_graph_cache(build_sequence(thick_records[0]), path)
        payload = json.loads(path.read_text())
        del payload[drop]
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigError) as excinfo:
            load_graph_cache(path)
        assert str(path) in str(excinfo.value)

    @pytest.mark.parametrize("text", ["{not json", "[]", '{"id": "x", "edges": "abc"}'])
    def test_corrupt_file_raises_config_error(self, tmp_path, text):
        path = tmp_path / "graph.json"
        path.write_text(text)
        with pytest.raises(ConfigError):
            load_graph_cache(path)

    def test_no_layers_is_rejected(self, tmp_path, thick_records):
        path = tmp_path / "graph.json"
        save_graph_cache(build_sequence(thick_records[0]), path)
        payload = json.loads(path.read_text())
        payload["features_by_layer"] = []
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigError):
            load_graph_cache(path)
