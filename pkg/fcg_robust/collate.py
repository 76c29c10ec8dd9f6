"""Feature collation: turning partially-defined feature matrices into fully
defined ones.

Three schemes are provided:

* :py:func:`.trim` drops every feature column undefined for some node,
* :py:func:`.zero` fills undefined entries with zeros,
* :py:func:`.prune` drops every node with an undefined entry, along with its
  edges (but keeps nodes left isolated by this).

Each returns the collated graph and a :py:class:`.CollationReport`.
"""

import io

import json

import logging

import os

import time

import numpy as np

from tqdm import tqdm

from fcg_robust.dataset import Dataset, DatasetEntry, write_graph, \
    write_index

from fcg_robust.errors import CollationError, FcgError


logger = logging.getLogger(__name__)

SCHEMES = ("trim", "zero", "prune")


class CollationReport(object):
    """What a collation scheme removed from a sample.

    Attributes
    ----------
    scheme : "trim", "zero" or "prune"
    dims_removed : [int, ...]
        Removed feature columns (input numbering).
    nodes_removed : [int, ...]
        Removed node ids (input numbering).
    output_dim : int
    node_map : {old_id: new_id, ...}
        Surviving node renumbering (prune only; identity otherwise).
    """

    def __init__(self, scheme, sample_id="", dims_removed=(),
                 nodes_removed=(), output_dim=0, node_map=None):
        self.scheme = scheme
        self.sample_id = sample_id
        self.dims_removed = [int(c) for c in dims_removed]
        self.nodes_removed = [int(v) for v in nodes_removed]
        self.output_dim = int(output_dim)
        self.node_map = node_map

    def to_json(self):
        d = {
            "scheme": self.scheme,
            "sample_id": self.sample_id,
            "dims_removed": self.dims_removed,
            "nodes_removed": self.nodes_removed,
            "output_dim": self.output_dim,
        }
        if self.node_map is not None:
            d["node_map"] = {str(k): v
                             for k, v in sorted(self.node_map.items())}
        return d

    @classmethod
    def from_json(cls, d):
        node_map = d.get("node_map")
        if node_map is not None:
            node_map = {int(k): v for k, v in node_map.items()}
        return cls(d["scheme"], d.get("sample_id", ""), d["dims_removed"],
                   d["nodes_removed"], d["output_dim"], node_map)


def non_universal_groups(g):
    """Indices of feature groups missing for at least one node."""
    return np.flatnonzero(~g.mask.all(axis=0))


def non_universal_dims(g):
    """The set C of feature columns undefined for at least one node."""
    names = [g.schema.groups[i].name for i in non_universal_groups(g)]
    return g.schema.columns(names)


def trim(g, schema=None):
    """Keep only feature columns defined for every node.

    Parameters
    ----------
    g : :py:class:`~fcg_robust.graph.AttributedGraph`
    schema : :py:class:`~fcg_robust.graph.FeatureSchema` or None
        If given, trim to exactly these groups (e.g. a dataset-wide schema
        from :py:func:`.dataset_trim_schema`); each must be fully present
        in ``g``.
    """
    present = g.mask.all(axis=0)
    if schema is None:
        keep = [grp.name for grp, ok in zip(g.schema, present) if ok]
    else:
        keep = schema.names
        for name in keep:
            if name not in g.schema:
                raise CollationError(
                    g.sample_id, "feature group {} not in sample".format(name))
            if not present[g.schema.index(name)]:
                raise CollationError(
                    g.sample_id,
                    "feature group {} is not universal".format(name))
    if not keep:
        raise CollationError(g.sample_id,
                             "trim leaves no feature dimensions")

    out_schema = g.schema.select(keep)
    cols = g.schema.columns(keep)
    removed = np.setdiff1d(np.arange(g.schema.dim), cols)
    groups = [g.schema.index(name) for name in out_schema.names]
    out = g.with_features(g.features[:, cols], g.mask[:, groups], out_schema)
    return out, CollationReport("trim", g.sample_id, dims_removed=removed,
                                output_dim=out_schema.dim)


def zero(g):
    """Replace every undefined feature entry with zero."""
    features = np.where(g.column_mask(), g.features, np.float32(0.0))
    out = g.with_features(features, np.ones_like(g.mask), g.schema)
    return out, CollationReport("zero", g.sample_id,
                                output_dim=g.schema.dim)


def prune(g):
    """Keep the subgraph induced by nodes whose features are all defined.

    Surviving nodes keep their relative order; isolated survivors are kept.
    """
    complete = g.mask.all(axis=1)
    keep = np.flatnonzero(complete)
    if len(keep) == 0:
        raise CollationError(g.sample_id,
                             "prune leaves no nodes with complete features")
    new_id = np.full(g.n, -1, dtype=np.int64)
    new_id[keep] = np.arange(len(keep))

    edges = g.edges
    if len(edges):
        edges = edges[complete[edges[:, 0]] & complete[edges[:, 1]]]
        edges = new_id[edges]

    records = None
    if g.records is not None:
        records = [g.records[i] for i in keep]
    out = g.replace(n=len(keep), edges=edges, features=g.features[keep],
                    mask=g.mask[keep], records=records)
    node_map = {int(old): int(new_id[old]) for old in keep}
    return out, CollationReport("prune", g.sample_id,
                                nodes_removed=np.flatnonzero(~complete),
                                output_dim=g.schema.dim, node_map=node_map)


def collate(g, scheme, trim_schema=None):
    """Apply the named collation scheme to a graph."""
    if scheme == "trim":
        return trim(g, trim_schema)
    elif scheme == "zero":
        return zero(g)
    elif scheme == "prune":
        return prune(g)
    else:
        raise FcgError("unknown collation scheme {!r}".format(scheme))


def dataset_trim_schema(graphs):
    """The groups universal within every sample of a dataset.

    Trimming each sample to this shared schema gives every sample the same
    width. Samples are folded in sample id order.
    """
    graphs = sorted(graphs, key=lambda g: g.sample_id)
    if not graphs:
        raise FcgError("cannot compute a trim schema of no samples")
    schema = graphs[0].schema
    keep = set(schema.names)
    for g in graphs:
        if g.schema != schema:
            raise FcgError("sample {} has a different feature schema".format(
                g.sample_id))
        keep &= set(grp.name for grp, ok in zip(g.schema, g.mask.all(axis=0))
                    if ok)
    if not keep:
        raise CollationError(graphs[0].sample_id,
                             "no feature group is universal across the "
                             "dataset")
    return schema.select(keep)


def collate_dataset(in_dir, out_dir, scheme, progress=False):
    """Collate every sample of a dataset directory into ``out_dir``.

    A ``<id>.collation.json`` report is written beside each sample. Trim
    uses the dataset-wide schema so all samples share one width.

    Returns
    -------
    [:py:class:`.CollationReport`, ...]
    """
    if scheme not in SCHEMES:
        raise FcgError("unknown collation scheme {!r}".format(scheme))
    dataset = Dataset(in_dir)
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)

    trim_schema = None
    if scheme == "trim":
        trim_schema = dataset_trim_schema(dataset)
        logger.info("Dataset trim schema keeps {}".format(
            ", ".join(trim_schema.names)))

    before = time.time()
    entries = []
    reports = []
    for g in tqdm(dataset, total=len(dataset), desc="collate",
                  disable=not progress):
        out, report = collate(g, scheme, trim_schema)
        write_graph(out, out_dir)
        with io.open(os.path.join(out_dir, g.sample_id + ".collation.json"),
                     "w", encoding="utf-8") as f:
            json.dump(report.to_json(), f, sort_keys=True)
            f.write(u"\n")
        entries.append(DatasetEntry(g.sample_id, g.label.family,
                                    g.label.type, out.n))
        reports.append(report)
        out_schema = out.schema
    after = time.time()
    logger.info("Collated {} samples with {} in {:.2f}s".format(
        len(entries), scheme, after - before))

    if not entries:
        out_schema = trim_schema or dataset.schema
    info = dict(dataset.info)
    info["collation"] = scheme
    write_index(out_dir, entries, out_schema, **info)
    return reports
