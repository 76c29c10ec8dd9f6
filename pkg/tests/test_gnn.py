import pytest

import json

import os

import numpy as np

from fcg_robust.autodiff import Tape

from fcg_robust.errors import CollationError, ConfigError, EmptySplitError, \
    FormatError, ShapeError, WidthMismatchError

from fcg_robust.gnn import GraphBatch, ModelConfig, ModelState, \
    buffer_shapes, init_model, load_checkpoint, model_forward, \
    norm_parameter_names, parameter_shapes, predict, reinit_classifier, \
    save_checkpoint

from fcg_robust.graph import AttributedGraph, FeatureSchema


def make_graph(n, edges, dim=3, seed=0, sample_id="g"):
    rng = np.random.RandomState(seed)
    schema = FeatureSchema([("x", dim, True)])
    return AttributedGraph(n, edges, rng.normal(size=(n, dim)), None, schema,
                           sample_id=sample_id)


@pytest.fixture
def graphs():
    return [
        make_graph(4, [(0, 1), (1, 2), (2, 3), (3, 0)], seed=1,
                   sample_id="a"),
        make_graph(3, [(0, 1), (0, 2)], seed=2, sample_id="b"),
        make_graph(5, [(0, 1), (1, 2), (1, 3), (3, 4), (4, 4)], seed=3,
                   sample_id="c"),
    ]


@pytest.fixture(params=["gcn", "gin"])
def config(request):
    return ModelConfig(backbone=request.param, layers=2, hidden=4,
                       input_dim=3, classes=2)


def test_config_defaults():
    config = ModelConfig()
    assert config.backbone == "gin"
    assert config.readout == "max"
    assert config.norm == "batch"
    assert ModelConfig.from_json(config.to_json()) == config
    assert config.replace(hidden=8) != config


def test_config_collects_violations():
    with pytest.raises(ConfigError) as e:
        ModelConfig(backbone="gat", layers=0, classes=1, dropout=1.0)
    assert len(e.value.violations) == 4
    assert "violations" in e.value.details()


def test_config_unknown_key():
    with pytest.raises(ConfigError):
        ModelConfig.from_json({"backbone": "gin", "heads": 4})


def test_parameter_shapes():
    gin = ModelConfig(backbone="gin", layers=2, hidden=4, input_dim=3)
    shapes = parameter_shapes(gin)
    assert shapes["layers.0.mlp0.weight"] == (3, 4)
    assert shapes["layers.1.mlp0.weight"] == (4, 4)
    assert shapes["classifier.weight"] == (4, 2)
    assert list(shapes)[-1] == "classifier.bias"
    assert len(buffer_shapes(gin)) == 4
    assert norm_parameter_names(gin) == [
        "layers.0.norm.gamma", "layers.0.norm.beta",
        "layers.1.norm.gamma", "layers.1.norm.beta"]

    gcn = ModelConfig(backbone="gcn", layers=1, hidden=4, input_dim=3,
                      norm="none")
    assert list(parameter_shapes(gcn)) == [
        "layers.0.weight", "layers.0.bias", "classifier.weight",
        "classifier.bias"]
    assert len(buffer_shapes(gcn)) == 0
    assert norm_parameter_names(gcn) == []


def test_init_is_deterministic(config):
    a = init_model(config, seed=5)
    b = init_model(config, seed=5)
    c = init_model(config, seed=6)
    for name in a.params:
        assert np.array_equal(a.params[name].value, b.params[name].value)
    assert not np.array_equal(a.params["classifier.weight"].value,
                              c.params["classifier.weight"].value)
    assert a.class_names == ["0", "1"]


def test_init_bounds():
    config = ModelConfig(backbone="gcn", layers=1, hidden=16, input_dim=9)
    state = init_model(config, seed=0)
    weight = state.params["layers.0.weight"].value
    assert np.abs(weight).max() <= 1.0 / 3.0
    assert np.all(state.params["layers.0.norm.gamma"].value == 1.0)
    assert np.all(state.params["layers.0.bias"].value == 0.0)
    assert np.all(state.buffers["layers.0.norm.running_var"] == 1.0)


def test_model_state_checks(config):
    state = init_model(config, seed=0)
    with pytest.raises(ShapeError):
        ModelState(config, state.params, state.buffers, ["only"])
    with pytest.raises(ShapeError):
        ModelState(config.replace(hidden=5), state.params, state.buffers)


def test_batch_layout(graphs):
    batch = GraphBatch(graphs, 3)
    assert batch.num_graphs == 3
    assert batch.num_nodes == 12
    assert batch.segment_ids.tolist() == [0] * 4 + [1] * 3 + [2] * 5
    assert batch.sample_ids == ["a", "b", "c"]
    # Undirected neighbour pairs never cross graph boundaries.
    assert np.array_equal(batch.segment_ids[batch.nbr_rows],
                          batch.segment_ids[batch.nbr_cols])
    # The self-loop (4, 4) of the last graph is its only diagonal pair.
    loops = batch.nbr_rows[batch.nbr_rows == batch.nbr_cols]
    assert loops.tolist() == [7 + 4]


def test_batch_directed():
    g = make_graph(2, [(0, 1)])
    undirected = GraphBatch([g], 3)
    assert sorted(zip(undirected.nbr_rows, undirected.nbr_cols)) == \
        [(0, 1), (1, 0)]
    directed = GraphBatch([g], 3, directed=True)
    assert directed.nbr_rows.tolist() == [0]
    assert directed.nbr_cols.tolist() == [1]


def test_batch_gcn_normalisation():
    batch = GraphBatch([make_graph(3, [(0, 1)])], 3)
    weights = dict(((int(r), int(c)), w) for r, c, w in
                   zip(batch.gcn_rows, batch.gcn_cols, batch.gcn_weights))
    assert weights[(0, 1)] == pytest.approx(0.5)
    assert weights[(0, 0)] == pytest.approx(0.5)
    assert weights[(2, 2)] == pytest.approx(1.0)
    assert (0, 2) not in weights


def test_batch_errors(graphs):
    with pytest.raises(EmptySplitError):
        GraphBatch([], 3)
    with pytest.raises(WidthMismatchError) as e:
        GraphBatch(graphs, 4)
    assert e.value.details() == {"expected": 4, "actual": 3,
                                 "sample_id": "a"}

    schema = FeatureSchema([("x", 2, True), ("y", 1, False)])
    partial = AttributedGraph(2, [(0, 1)], np.zeros((2, 3)),
                              [[True, True], [True, False]], schema,
                              sample_id="p")
    with pytest.raises(CollationError):
        GraphBatch([partial], 3)

    empty = AttributedGraph(0, (), np.zeros((0, 3)), None,
                            FeatureSchema([("x", 3, True)]), sample_id="e")
    with pytest.raises(ShapeError):
        GraphBatch([empty], 3)


def test_forward_shapes(config, graphs):
    state = init_model(config, seed=0)
    emb, logits = model_forward(state, graphs)
    assert emb.shape == (3, 4)
    assert logits.shape == (3, 2)
    # Max readout over ReLU outputs.
    assert np.all(emb.value >= 0.0)


def test_forward_unknown_mode(config, graphs):
    with pytest.raises(ValueError):
        model_forward(init_model(config, seed=0), graphs, mode="test")


def test_eval_is_per_graph(config, graphs):
    state = init_model(config, seed=0)
    _, together = model_forward(state, graphs)
    for num, g in enumerate(graphs):
        _, alone = model_forward(state, [g])
        assert np.allclose(alone.value[0], together.value[num])


def test_eval_node_permutation_invariance(config):
    g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (1, 3)],
                   seed=4)
    perm = np.array([3, 0, 4, 1, 2])
    inverse = np.argsort(perm)
    permuted = AttributedGraph(5, inverse[g.edges], g.features[perm], None,
                               g.schema)
    state = init_model(config, seed=1)
    _, a = model_forward(state, [g])
    _, b = model_forward(state, [permuted])
    assert np.allclose(a.value, b.value)


def test_eval_records_nothing(config, graphs):
    state = init_model(config, seed=0)
    tape = Tape()
    _, logits = model_forward(state, graphs, tape=tape)
    grads = tape.backward(tape.sum(logits), state.params)
    assert all(not np.any(g) for g in grads.values())


def test_modes_and_running_statistics(graphs):
    config = ModelConfig(backbone="gin", layers=2, hidden=4, input_dim=3)
    state = init_model(config, seed=0)
    before = dict((k, v.copy()) for k, v in state.buffers.items())

    model_forward(state, graphs, mode="eval")
    model_forward(state, graphs, mode="adapt")
    for name, value in state.buffers.items():
        assert np.array_equal(value, before[name])

    model_forward(state, graphs, mode="train")
    assert not np.array_equal(state.buffers["layers.0.norm.running_mean"],
                              before["layers.0.norm.running_mean"])


def test_train_mode_dropout(graphs):
    config = ModelConfig(layers=1, hidden=8, input_dim=3, dropout=0.5,
                         norm="none")
    state = init_model(config, seed=0)
    _, a = model_forward(state, graphs, mode="train",
                         rng=np.random.RandomState(1))
    _, b = model_forward(state, graphs, mode="train",
                         rng=np.random.RandomState(1))
    _, c = model_forward(state, graphs, mode="eval")
    assert np.array_equal(a.value, b.value)
    assert not np.allclose(a.value, c.value)


@pytest.mark.parametrize("backbone", ["gcn", "gin"])
@pytest.mark.parametrize("readout", ["max", "mean"])
def test_model_gradients(graphs, backbone, readout):
    config = ModelConfig(backbone=backbone, layers=2, hidden=4, input_dim=3,
                         readout=readout)
    state = init_model(config, seed=2)
    labels = np.array([0, 1, 1])

    def loss_value():
        tape = Tape()
        _, logits = model_forward(state, graphs, mode="adapt", tape=tape)
        return tape.softmax_cross_entropy(logits, labels), tape

    loss, tape = loss_value()
    grads = tape.backward(loss, state.params)
    rng = np.random.RandomState(0)
    h = 1e-6
    for name in state.params:
        value = state.params[name].value
        for _ in range(3):
            idx = tuple(rng.randint(s) for s in value.shape)
            old = value[idx]
            value[idx] = old + h
            up = loss_value()[0].value
            value[idx] = old - h
            down = loss_value()[0].value
            value[idx] = old
            numeric = (up - down) / (2 * h)
            assert grads[name][idx] == pytest.approx(numeric, rel=1e-4,
                                                     abs=1e-6)


def test_predict_batches(config, graphs):
    state = init_model(config, seed=0)
    emb1, logits1 = predict(state, graphs, batch_size=1)
    emb3, logits3 = predict(state, graphs, batch_size=64)
    assert np.allclose(emb1, emb3)
    assert np.allclose(logits1, logits3)
    with pytest.raises(EmptySplitError):
        predict(state, [])


def test_reinit_classifier(config):
    state = init_model(config, seed=0)
    other = reinit_classifier(state, 3, seed=1, class_names=["x", "y", "z"])
    assert other.config.classes == 3
    assert other.params["classifier.weight"].shape == (4, 3)
    assert np.all(other.params["classifier.bias"].value == 0.0)
    for name in state.params:
        if not name.startswith("classifier."):
            assert np.array_equal(other.params[name].value,
                                  state.params[name].value)
    assert state.config.classes == 2


def test_checkpoint_round_trip(tmpdir, config, graphs):
    state = init_model(config, seed=3, class_names=["benign", "malicious"])
    model_forward(state, graphs, mode="train")
    path = str(tmpdir.join("ckpt"))
    save_checkpoint(state, path)

    loaded = load_checkpoint(path)
    assert loaded.config == state.config
    assert loaded.class_names == ["benign", "malicious"]
    for name, value in state.tensors().items():
        assert np.array_equal(loaded.tensors()[name], value)
    assert np.array_equal(predict(loaded, graphs)[1],
                          predict(state, graphs)[1])

    with open(os.path.join(path, "manifest.json")) as f:
        manifest = json.load(f)
    size = sum(8 * int(np.prod(s)) for s in
               list(parameter_shapes(config).values()) +
               list(buffer_shapes(config).values()))
    assert manifest["size"] == size
    assert os.path.getsize(os.path.join(path, "params.bin")) == size
    assert manifest["tensors"][1]["offset"] == \
        8 * int(np.prod(manifest["tensors"][0]["shape"]))


def test_checkpoint_corruption(tmpdir, config):
    state = init_model(config, seed=3)
    path = str(tmpdir.join("ckpt"))
    save_checkpoint(state, path)
    params = os.path.join(path, "params.bin")
    with open(params, "rb") as f:
        data = f.read()

    with open(params, "wb") as f:
        f.write(data[:-8])
    with pytest.raises(FormatError):
        load_checkpoint(path)

    with open(params, "wb") as f:
        f.write(data + b"\0" * 8)
    with pytest.raises(FormatError):
        load_checkpoint(path)

    with open(params, "wb") as f:
        f.write(data)
    manifest_path = os.path.join(path, "manifest.json")
    with open(manifest_path) as f:
        manifest = json.load(f)
    manifest["tensors"][0]["shape"] = [1, 1]
    with open(manifest_path, "w") as f:
        json.dump(manifest, f)
    with pytest.raises(FormatError):
        load_checkpoint(path)

    manifest["format"] = "something-else"
    with open(manifest_path, "w") as f:
        json.dump(manifest, f)
    with pytest.raises(FormatError):
        load_checkpoint(path)

    with pytest.raises(FormatError):
        load_checkpoint(str(tmpdir.join("missing")))


def dense_gcn_operator(n, edges, directed):
    a = np.zeros((n, n))
    for src, dst in edges:
        a[src, dst] = 1.0
    if not directed:
        a = np.maximum(a, a.T)
    a_hat = a + np.eye(n)
    return a_hat / np.sqrt(np.outer(a_hat.sum(axis=1), a_hat.sum(axis=0)))


def sparse_operator(batch):
    m = np.zeros((batch.num_nodes, batch.num_nodes))
    np.add.at(m, (batch.gcn_rows, batch.gcn_cols), batch.gcn_weights)
    return m


@pytest.mark.parametrize("directed", [False, True])
@pytest.mark.parametrize("edges", [
    [(0, 1), (1, 2)],
    [(0, 1), (1, 1), (2, 0)],
    [(0, 0), (0, 1), (0, 2), (3, 2), (3, 3)],
])
def test_gcn_operator_matches_dense(edges, directed):
    n = max(max(e) for e in edges) + 1
    batch = GraphBatch([make_graph(n, edges)], 3, directed=directed)
    assert np.allclose(sparse_operator(batch),
                       dense_gcn_operator(n, edges, directed), atol=1e-12)


def test_self_loop_counts_in_aggregation():
    batch = GraphBatch([make_graph(2, [(0, 0), (0, 1)])], 3)
    pairs = sorted(zip(batch.nbr_rows.tolist(), batch.nbr_cols.tolist()))
    assert pairs == [(0, 0), (0, 1), (1, 0)]
    m = sparse_operator(batch)
    # node 0: A_hat row (2, 1), degree 3; node 1: row (1, 1), degree 2
    assert m[0, 0] == pytest.approx(2.0 / 3.0)
    assert m[0, 1] == pytest.approx(1.0 / np.sqrt(6.0))


def constant_graph(n, edges, sample_id):
    schema = FeatureSchema([("x", 3, True)])
    return AttributedGraph(n, edges, np.ones((n, 3)), None, schema,
                           sample_id=sample_id)


@pytest.mark.parametrize("seed", range(10))
def test_gin_separates_structure(seed):
    config = ModelConfig(backbone="gin", layers=2, hidden=16, input_dim=3,
                         norm="none")
    state = init_model(config, seed=seed)
    star = constant_graph(4, [(0, 1), (0, 2), (0, 3)], "star")
    path = constant_graph(4, [(0, 1), (1, 2), (2, 3)], "path")
    emb, _ = model_forward(state, [star, path])
    assert not np.allclose(emb.value[0], emb.value[1])

    # 2-regular graphs on 6 nodes cannot be told apart by 1-WL
    cycle = constant_graph(6, [(i, (i + 1) % 6) for i in range(6)], "c6")
    triangles = constant_graph(6, [(0, 1), (1, 2), (2, 0),
                                   (3, 4), (4, 5), (5, 3)], "2c3")
    emb, _ = model_forward(state, [cycle, triangles])
    assert np.allclose(emb.value[0], emb.value[1])


def test_eval_with_settled_statistics_matches_train(graphs):
    config = ModelConfig(backbone="gin", layers=2, hidden=8, input_dim=3)
    state = init_model(config, seed=5)
    batch = GraphBatch(graphs, 3)
    for _ in range(300):
        _, train_logits = model_forward(state, batch, mode="train")
    _, eval_logits = model_forward(state, batch, mode="eval")
    assert np.allclose(eval_logits.value, train_logits.value, atol=1e-6)
