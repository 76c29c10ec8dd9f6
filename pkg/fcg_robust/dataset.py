"""Directories of attributed graphs.

A dataset directory holds, for every sample, an edge list ``<id>.edges`` and
a feature matrix ``<id>.fmx``, plus an ``index.json`` listing the samples,
their labels and the shared feature schema. Extraction writes dataset
directories; collation reads one and writes another.
"""

import io

import json

import logging

import os

from collections import namedtuple

from fcg_robust.errors import FcgError, FormatError

from fcg_robust.formats import read_feature_matrix, write_feature_matrix

from fcg_robust.graph import AttributedGraph, FeatureSchema, read_edges, \
    write_edges

from fcg_robust.records import Label


logger = logging.getLogger(__name__)

INDEX_FILE = "index.json"


class DatasetEntry(namedtuple("DatasetEntry",
                              "sample_id family type node_count")):
    __slots__ = ()

    @property
    def label(self):
        return Label(self.family, self.type)


def graph_paths(directory, sample_id):
    """The (edges, features) file paths of a sample."""
    return (os.path.join(directory, sample_id + ".edges"),
            os.path.join(directory, sample_id + ".fmx"))


def write_graph(g, directory):
    """Write a graph's edges and feature matrix into ``directory``."""
    edges_path, fmx_path = graph_paths(directory, g.sample_id)
    write_edges(g.edges, edges_path)
    write_feature_matrix(g, fmx_path)


def read_graph(directory, entry, expected_schema=None):
    """Read one sample of a dataset directory."""
    edges_path, fmx_path = graph_paths(directory, entry.sample_id)
    features, mask, schema = read_feature_matrix(fmx_path, expected_schema)
    return AttributedGraph(len(features), read_edges(edges_path), features,
                           mask, schema, label=entry.label,
                           sample_id=entry.sample_id)


def write_index(directory, entries, schema, **extra):
    """Write ``index.json`` for a dataset directory."""
    index = {
        "schema": schema.to_json(),
        "schema_hash": schema.schema_hash,
        "entries": [dict(e._asdict())
                    for e in sorted(entries, key=lambda e: e.sample_id)],
    }
    index.update(extra)
    with io.open(os.path.join(directory, INDEX_FILE), "w",
                 encoding="utf-8") as f:
        json.dump(index, f, indent=1, sort_keys=True)
        f.write(u"\n")


class Dataset(object):
    """A dataset directory opened for reading.

    Graphs are loaded lazily, in sample id order::

        >>> ds = Dataset("out/extracted")
        >>> for g in ds:
        ...     print(g.sample_id, g.label)
    """

    def __init__(self, directory):
        self.directory = directory
        path = os.path.join(directory, INDEX_FILE)
        try:
            with io.open(path, "r", encoding="utf-8") as f:
                index = json.load(f)
        except (IOError, OSError) as e:
            raise FcgError("cannot open dataset {}: {}".format(directory, e))
        except ValueError as e:
            raise FormatError("{} is not valid JSON: {}".format(path, e))
        try:
            self.schema = FeatureSchema.from_json(index["schema"])
            self.entries = [DatasetEntry(**e) for e in index["entries"]]
            self.info = {k: v for k, v in index.items()
                         if k not in ("schema", "schema_hash", "entries")}
        except FcgError:
            raise
        except (KeyError, TypeError, AttributeError, ValueError) as e:
            raise FormatError("{} is malformed ({!r})".format(path, e))
        self._by_id = {e.sample_id: e for e in self.entries}

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        for entry in self.entries:
            yield self.load(entry.sample_id)

    def __contains__(self, sample_id):
        return sample_id in self._by_id

    def load(self, sample_id):
        if sample_id not in self._by_id:
            raise FcgError("sample {} is not in dataset {}".format(
                sample_id, self.directory))
        return read_graph(self.directory, self._by_id[sample_id], self.schema)

    def load_all(self, sample_ids=None):
        """Load the named samples (default: all) into a list."""
        if sample_ids is None:
            sample_ids = [e.sample_id for e in self.entries]
        return [self.load(s) for s in sample_ids]
