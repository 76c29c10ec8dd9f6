import pytest

import json

import os

import numpy as np

from fcg_robust.collate import CollationReport, collate, collate_dataset, \
    dataset_trim_schema, non_universal_dims, prune, trim, zero

from fcg_robust.dataset import Dataset

from fcg_robust.errors import CollationError, FcgError

from fcg_robust.extract import FeatureConfig, extract_corpus

from fcg_robust.graph import AttributedGraph, FeatureSchema


@pytest.fixture
def schema():
    return FeatureSchema([("name", 2, True), ("code", 3, False),
                          ("ldp", 1, True)])


@pytest.fixture
def graph(schema):
    features = np.arange(18, dtype=np.float32).reshape(3, 6) + 1
    mask = np.array([[True, True, True],
                     [True, False, True],
                     [True, True, True]])
    return AttributedGraph(3, [(0, 1), (1, 2), (2, 0), (2, 2)], features,
                           mask, schema, sample_id="s")


def test_trim(graph):
    out, report = trim(graph)
    assert out.schema.names == ["name", "ldp"]
    assert out.features.tolist() == [[1, 2, 6], [7, 8, 12], [13, 14, 18]]
    assert out.is_complete
    assert report.dims_removed == [2, 3, 4]
    assert report.output_dim == 3
    assert out.edges.tolist() == graph.edges.tolist()
    assert list(non_universal_dims(graph)) == [2, 3, 4]


def test_trim_to_schema(graph, schema):
    out, _ = trim(graph, schema.select(["ldp"]))
    assert out.schema.names == ["ldp"]
    with pytest.raises(CollationError):
        trim(graph, schema.select(["code"]))
    with pytest.raises(CollationError):
        trim(graph, FeatureSchema([("other", 1, True)]))


def test_trim_nothing_left(schema):
    g = AttributedGraph(1, features=np.zeros((1, 6)),
                        mask=[[False, False, False]], schema=schema)
    with pytest.raises(CollationError):
        trim(g)


def test_zero(graph):
    out, report = zero(graph)
    assert out.schema == graph.schema
    assert out.features[1].tolist() == [7, 8, 0, 0, 0, 12]
    assert out.features[0].tolist() == graph.features[0].tolist()
    assert out.is_complete
    assert report.dims_removed == [] and report.nodes_removed == []


def test_prune(graph):
    out, report = prune(graph)
    assert out.n == 2
    assert out.features.tolist() == [graph.features[0].tolist(),
                                     graph.features[2].tolist()]
    # only (2, 0) and (2, 2) survive, renumbered
    assert out.edges.tolist() == [[1, 0], [1, 1]]
    assert report.nodes_removed == [1]
    assert report.node_map == {0: 0, 2: 1}


def test_prune_keeps_isolated_survivors(schema):
    mask = np.array([[True] * 3, [True, False, True], [True] * 3])
    g = AttributedGraph(3, [(0, 1), (1, 2)], np.ones((3, 6)), mask, schema)
    out, _ = prune(g)
    assert out.n == 2
    assert out.num_edges == 0


def test_prune_nothing_left(schema):
    g = AttributedGraph(1, features=np.zeros((1, 6)),
                        mask=[[True, False, True]], schema=schema,
                        sample_id="x")
    with pytest.raises(CollationError) as excinfo:
        prune(g)
    assert excinfo.value.sample_id == "x"


def test_complete_graph_unchanged(schema):
    g = AttributedGraph(2, [(0, 1)], np.ones((2, 6)),
                        np.ones((2, 3), bool), schema)
    for scheme in ("trim", "zero", "prune"):
        out, _ = collate(g, scheme)
        assert out.features.tolist() == g.features.tolist()
        assert out.edges.tolist() == g.edges.tolist()
    with pytest.raises(FcgError):
        collate(g, "impute")


def test_report_json_round_trip(graph):
    _, report = prune(graph)
    again = CollationReport.from_json(json.loads(json.dumps(
        report.to_json())))
    assert again.node_map == report.node_map
    assert again.nodes_removed == report.nodes_removed


def brute_force(features, mask, schema, edges, scheme):
    """Direct set-based definitions of the three schemes."""
    n = len(features)
    col_groups = schema.column_groups()
    defined = mask[:, col_groups]
    c = set(j for j in range(schema.dim)
            if any(not defined[i, j] for i in range(n)))
    m = set(i for i in range(n)
            if any(not defined[i, j] for j in range(schema.dim)))
    if scheme == "trim":
        cols = [j for j in range(schema.dim) if j not in c]
        return features[:, cols], sorted(map(tuple, edges))
    if scheme == "zero":
        out = features.copy()
        for i in range(n):
            for j in range(schema.dim):
                if not defined[i, j]:
                    out[i, j] = 0.0
        return out, sorted(map(tuple, edges))
    kept = [i for i in range(n) if i not in m]
    new = {old: k for k, old in enumerate(kept)}
    out_edges = sorted((new[a], new[b]) for a, b in edges
                       if a in new and b in new)
    return features[kept], out_edges


def test_matches_brute_force_on_random_graphs():
    rng = np.random.RandomState(0)
    for _ in range(1000):
        groups = rng.randint(1, 9)
        schema = FeatureSchema([("g{}".format(i), rng.randint(1, 4),
                                 i == 0) for i in range(groups)])
        n = rng.randint(1, 31)
        features = rng.standard_normal((n, schema.dim)).astype(np.float32)
        mask = rng.random_sample((n, groups)) < 0.8
        mask[:, 0] = True
        mask[0] = True
        edges = rng.randint(0, n, size=(rng.randint(0, 2 * n), 2))
        g = AttributedGraph(n, edges, features, mask, schema)
        for scheme in ("trim", "zero", "prune"):
            out, _ = collate(g, scheme)
            expected, expected_edges = brute_force(
                features, mask, schema, g.edges, scheme)
            assert np.array_equal(out.features, expected)
            assert sorted(map(tuple, out.edges.tolist())) == expected_edges


@pytest.fixture(scope="module")
def extracted(tmpdir_factory, corpus):
    _, index = corpus
    out = str(tmpdir_factory.mktemp("extracted"))
    extract_corpus(index, out, FeatureConfig(["meta", "ldp"]))
    return out


@pytest.mark.parametrize("scheme", ["trim", "zero", "prune"])
def test_collate_dataset(tmpdir, extracted, scheme):
    out = str(tmpdir.join(scheme))
    reports = collate_dataset(extracted, out, scheme)
    dataset = Dataset(out)
    assert len(reports) == len(dataset) == len(Dataset(extracted))
    assert dataset.info["collation"] == scheme
    widths = set()
    for g in dataset:
        assert g.is_complete
        widths.add(g.dim)
    assert len(widths) == 1
    assert os.path.isfile(os.path.join(
        out, dataset.entries[0].sample_id + ".collation.json"))


def test_dataset_trim_schema(extracted):
    schema = dataset_trim_schema(Dataset(extracted))
    assert schema.names[:5] == ["class_name", "method_name", "num_params",
                                "param_types", "return_type"]
    assert schema.names[-1] == "ldp"
    with pytest.raises(FcgError):
        dataset_trim_schema([])
