"""Attributed graph construction: topology and node feature extraction.

The node feature vector of function ``i`` is the concatenation
``x_meta || x_llm || x_ldp`` of whichever feature families are configured.
"""

import logging

import os

import time

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from tqdm import tqdm

from fcg_robust.corpus import CorpusEntry

from fcg_robust.dataset import DatasetEntry, write_graph, write_index

from fcg_robust.errors import EmbeddingError, FcgError

from fcg_robust.formats import EmbeddingTable, read_embeddings

from fcg_robust.graph import FeatureSchema, load_sample

from fcg_robust.ldp import LDP_WIDTH, ldp_features

from fcg_robust.meta import META_GROUPS, meta_features


logger = logging.getLogger(__name__)

FEATURE_FAMILIES = ("meta", "llm", "ldp")

DEFAULT_LLM_DIM = 64


class FeatureConfig(object):
    """Which feature families make up the node features.

    Parameters
    ----------
    families : iterable of "meta", "llm", "ldp"
    llm_dim : int
        Width of the code embedding group; embedding files must agree.
    """

    def __init__(self, families=("meta", "ldp"), llm_dim=DEFAULT_LLM_DIM):
        families = [f.strip().lower() for f in families]
        unknown = set(families).difference(FEATURE_FAMILIES)
        if unknown:
            raise FcgError("unknown feature families {}".format(
                sorted(unknown)))
        if not families:
            raise FcgError("no feature family selected")
        if llm_dim < 1:
            raise FcgError("llm_dim must be positive")
        self.families = tuple(f for f in FEATURE_FAMILIES if f in families)
        self.llm_dim = int(llm_dim)

    @classmethod
    def parse(cls, spec, llm_dim=DEFAULT_LLM_DIM):
        """Build from a comma-separated list such as ``"meta,llm,ldp"``."""
        return cls([f for f in spec.split(",") if f.strip()], llm_dim)

    def __contains__(self, family):
        return family in self.families

    def __repr__(self):
        return "FeatureConfig({})".format(",".join(self.families))

    def schema(self):
        """The feature schema of graphs built with this configuration."""
        groups = []
        if "meta" in self:
            groups.extend(META_GROUPS)
        if "llm" in self:
            groups.append(("llm", self.llm_dim, False))
        if "ldp" in self:
            groups.append(("ldp", LDP_WIDTH, True))
        return FeatureSchema(groups)


def build_adjacency(edges_path, records_path, sample_id="", label=None):
    """The topology extractor: the call graph of a sample without features.

    Identical to :py:func:`fcg_robust.graph.load_sample`.
    """
    return load_sample(edges_path, records_path, sample_id, label)


def ingest_embeddings(path, n):
    """Read a sample's code embeddings, checking node ids against ``n``."""
    table = read_embeddings(path)
    table.check_nodes(n)
    return table


def assemble_features(g, records, embeddings=None, config=None):
    """Populate a graph's masked node feature matrix.

    Parameters
    ----------
    g : :py:class:`~fcg_robust.graph.AttributedGraph`
        The call graph (topology only).
    records : [:py:class:`~fcg_robust.records.FunctionRecord`, ...]
        One record per node.
    embeddings : :py:class:`~fcg_robust.formats.EmbeddingTable` or None
        Code embeddings; nodes without an entry lack the ``llm`` group.
    config : :py:class:`.FeatureConfig`

    Returns
    -------
    :py:class:`~fcg_robust.graph.AttributedGraph`
    """
    config = config or FeatureConfig()
    if len(records) != g.n:
        raise FcgError("sample {}: {} records for {} nodes".format(
            g.sample_id, len(records), g.n))
    schema = config.schema()

    blocks = []
    masks = []
    if "meta" in config:
        meta = [meta_features(r) for r in records]
        blocks.append(np.array([v for v, _ in meta]).reshape(g.n, -1))
        masks.append(np.array([p for _, p in meta],
                              dtype=bool).reshape(g.n, -1))
    if "llm" in config:
        if embeddings is None:
            embeddings = EmbeddingTable(config.llm_dim)
        if embeddings.dim != config.llm_dim:
            raise EmbeddingError(
                "sample {}: embedding dimension {} but {} configured".format(
                    g.sample_id, embeddings.dim, config.llm_dim))
        embeddings.check_nodes(g.n)
        llm = np.zeros((g.n, config.llm_dim))
        llm_present = np.zeros((g.n, 1), dtype=bool)
        for node, vector in embeddings.entries.items():
            llm[node] = vector
            llm_present[node] = True
        blocks.append(llm)
        masks.append(llm_present)
    if "ldp" in config:
        blocks.append(ldp_features(g.n, g.edges))
        masks.append(np.ones((g.n, 1), dtype=bool))

    features = np.hstack(blocks).astype(np.float32)
    mask = np.hstack(masks)
    return g.with_features(features, mask, schema)


def extract_sample(entry, config, embeddings_dir=None):
    """Load and featurise one corpus sample.

    Embeddings are taken from ``<embeddings_dir>/<sample_id>.emb`` when an
    embeddings directory is given, otherwise from the sample's own
    ``embeddings.emb`` if present.
    """
    g = build_adjacency(entry.edges_path, entry.records_path,
                        entry.sample_id, entry.label)
    embeddings = None
    if "llm" in config:
        if embeddings_dir is not None:
            path = os.path.join(embeddings_dir, entry.sample_id + ".emb")
        else:
            path = entry.embeddings_path
        if os.path.isfile(path):
            embeddings = ingest_embeddings(path, g.n)
    return assemble_features(g, g.records, embeddings, config)


def _extract_to(args):
    entry, families, llm_dim, embeddings_dir, out_dir = args
    g = extract_sample(CorpusEntry(*entry), FeatureConfig(families, llm_dim),
                       embeddings_dir)
    write_graph(g, out_dir)
    return DatasetEntry(g.sample_id, entry[1], entry[2], g.n)


def extract_corpus(index, out_dir, config, embeddings_dir=None, workers=1,
                   progress=False):
    """Featurise every sample of a corpus into a dataset directory.

    Samples are independent; with ``workers > 1`` they are processed by a
    process pool. Output files do not depend on the number of workers.

    Returns
    -------
    [:py:class:`~fcg_robust.dataset.DatasetEntry`, ...]
    """
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    jobs = [(tuple(entry), config.families, config.llm_dim, embeddings_dir,
             out_dir)
            for entry in index]

    logger.info("Extracting {} samples with {} using {} worker(s)...".format(
        len(jobs), config, workers))
    before = time.time()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            entries = list(tqdm(pool.map(_extract_to, jobs), total=len(jobs),
                                desc="extract", disable=not progress))
    else:
        entries = [_extract_to(job)
                   for job in tqdm(jobs, desc="extract", disable=not progress)]
    after = time.time()
    logger.info("Extracted {} samples in {:.2f}s".format(
        len(entries), after - before))

    write_index(out_dir, entries, config.schema(),
                features=list(config.families), collation=None)
    return entries
