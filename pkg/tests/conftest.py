import pytest

import numpy as np

from fcg_robust.graph import AttributedGraph, FeatureSchema

from fcg_robust.records import Label

from fcg_robust.synthetic import SyntheticConfig, generate_synthetic_corpus


@pytest.fixture(scope="session")
def small_synthetic_config():
    return SyntheticConfig(families=2, types=2, samples_per_type=3,
                           min_nodes=4, max_nodes=10, llm_dim=4, seed=3)


@pytest.fixture(scope="session")
def corpus(tmpdir_factory, small_synthetic_config):
    """A 12-sample synthetic corpus: (root, index). Never modified."""
    root = str(tmpdir_factory.mktemp("corpus"))
    index = generate_synthetic_corpus(small_synthetic_config, root)
    return root, index


@pytest.fixture(scope="session")
def toy_graphs():
    """Two separable classes of small ring graphs: (graphs, class names)."""
    rng = np.random.RandomState(0)
    schema = FeatureSchema([("x", 3, True)])
    graphs, classes = [], []
    for num in range(24):
        name = "ab"[num % 2]
        n = rng.randint(3, 7)
        features = rng.normal(scale=0.3, size=(n, 3))
        features[:, 0] += 2.0 if name == "a" else -2.0
        graphs.append(AttributedGraph(
            n, [(i, (i + 1) % n) for i in range(n)], features, None, schema,
            Label(name, "trojan"), "s{:02d}".format(num)))
        classes.append(name)
    return graphs, classes
