import pytest

import os

import numpy as np

from fcg_robust.dataset import Dataset, graph_paths

from fcg_robust.errors import BoundsError, EmbeddingError, FcgError

from fcg_robust.extract import FeatureConfig, assemble_features, \
    extract_corpus, extract_sample

from fcg_robust.formats import EmbeddingTable

from fcg_robust.graph import AttributedGraph

from fcg_robust.ldp import LDP_WIDTH

from fcg_robust.meta import META_DIM, META_GROUPS

from fcg_robust.records import FunctionRecord

from fcg_robust.synthetic import SyntheticConfig, generate_sample


@pytest.fixture
def records():
    return [FunctionRecord(("com", "a"), "main", access_flags=["public"]),
            FunctionRecord(("android", "util", "Log"), "d", external=True),
            FunctionRecord(("com", "a"), "helper")]


@pytest.fixture
def topology():
    return AttributedGraph(3, [(0, 1), (0, 2)], sample_id="s")


def test_feature_config():
    config = FeatureConfig.parse("ldp, meta", 8)
    assert config.families == ("meta", "ldp")
    assert "llm" not in config
    schema = FeatureConfig(["meta", "llm", "ldp"], 8).schema()
    assert schema.dim == META_DIM + 8 + LDP_WIDTH
    assert schema.names[-2:] == ["llm", "ldp"]
    assert schema["ldp"].universal
    assert not schema["llm"].universal

    with pytest.raises(FcgError):
        FeatureConfig.parse("meta,bogus")
    with pytest.raises(FcgError):
        FeatureConfig.parse("")
    with pytest.raises(FcgError):
        FeatureConfig(["meta"], 0)


def test_assemble_meta_ldp(topology, records):
    g = assemble_features(topology, records, config=FeatureConfig())
    assert g.features.shape == (3, META_DIM + LDP_WIDTH)
    assert g.features.dtype == np.float32
    assert g.mask.shape == (3, len(META_GROUPS) + 1)
    # The external node only has names, signature and LDP.
    assert g.mask[1].sum() == 5 + 1
    # No code, instructions or strings: names, signature, flags and LDP.
    assert g.mask[0].sum() == 5 + 1 + 1
    assert g.features[0, -LDP_WIDTH:].tolist() == [2, 1, 1, 1, 0]


def test_assemble_llm(topology, records):
    config = FeatureConfig(["llm", "ldp"], 2)
    table = EmbeddingTable(2, {0: [1.0, 2.0], 2: [3.0, 4.0]})
    g = assemble_features(topology, records, table, config)
    assert g.schema.names == ["llm", "ldp"]
    assert g.mask[:, 0].tolist() == [True, False, True]
    assert g.features[2, :2].tolist() == [3.0, 4.0]
    assert not g.features[1, :2].any()

    # Without embeddings no node has the llm group.
    g = assemble_features(topology, records, None, config)
    assert not g.mask[:, 0].any()


def test_assemble_checks(topology, records):
    with pytest.raises(FcgError):
        assemble_features(topology, records[:2])
    with pytest.raises(EmbeddingError):
        assemble_features(topology, records, EmbeddingTable(3),
                          FeatureConfig(["llm"], 2))
    with pytest.raises(BoundsError):
        assemble_features(topology, records,
                          EmbeddingTable(2, {5: [0.0, 0.0]}),
                          FeatureConfig(["llm"], 2))


def test_extract_sample_uses_sample_embeddings(corpus):
    _, index = corpus
    entry = next(iter(index))
    g = extract_sample(entry, FeatureConfig(["meta", "llm", "ldp"], 4))
    assert g.n == entry.node_count
    assert g.mask[:, g.schema.index("llm")].any()
    assert g.label == entry.label


def test_extract_corpus_deterministic_across_workers(tmpdir, corpus):
    _, index = corpus
    config = FeatureConfig(["meta", "llm", "ldp"], 4)
    one = str(tmpdir.join("one"))
    two = str(tmpdir.join("two"))
    entries = extract_corpus(index, one, config, workers=1)
    extract_corpus(index, two, config, workers=2)

    assert len(entries) == len(index)
    for entry in entries:
        for a, b in zip(graph_paths(one, entry.sample_id),
                        graph_paths(two, entry.sample_id)):
            with open(a, "rb") as fa, open(b, "rb") as fb:
                assert fa.read() == fb.read()

    dataset = Dataset(one)
    assert len(dataset) == len(index)
    assert dataset.schema == config.schema()
    assert dataset.info["features"] == ["meta", "llm", "ldp"]
    g = dataset.load(entries[0].sample_id)
    assert g.schema == config.schema()
    assert os.path.isfile(os.path.join(one, "index.json"))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_assemble_is_permutation_equivariant(seed):
    config = SyntheticConfig(min_nodes=8, max_nodes=15, llm_dim=4,
                             seed=seed)
    _, records, edges, table = generate_sample(config, 1, seed % 2, seed)
    n = len(records)
    features = FeatureConfig(["meta", "llm", "ldp"], 4)
    g = assemble_features(AttributedGraph(n, edges, sample_id="s"), records,
                          table, features)

    perm = np.random.RandomState(seed).permutation(n)
    inverse = np.argsort(perm)
    moved = AttributedGraph(n, [(inverse[a], inverse[b]) for a, b in edges],
                            sample_id="s")
    moved_table = EmbeddingTable(4, {int(inverse[node]): vector for
                                     node, vector in table.entries.items()})
    h = assemble_features(moved, [records[i] for i in perm], moved_table,
                          features)
    assert np.array_equal(h.mask, g.mask[perm])
    assert np.allclose(h.features, g.features[perm])
