"""Corpus discovery.

A corpus is a directory tree laid out by malware label::

    root/<family>/<type>/<sample_id>/edges.txt
                                    /records.jsonl
                                    /embeddings.emb   (optional)
"""

import io

import json

import logging

import os

from collections import namedtuple

from fcg_robust.errors import FcgError

from fcg_robust.graph import load_sample

from fcg_robust.records import Label, count_records


logger = logging.getLogger(__name__)

EDGES_FILE = "edges.txt"
RECORDS_FILE = "records.jsonl"
EMBEDDINGS_FILE = "embeddings.emb"


class CorpusEntry(namedtuple("CorpusEntry",
                             "sample_id family type node_count path")):
    """One sample of a corpus."""

    __slots__ = ()

    @property
    def label(self):
        return Label(self.family, self.type)

    @property
    def edges_path(self):
        return os.path.join(self.path, EDGES_FILE)

    @property
    def records_path(self):
        return os.path.join(self.path, RECORDS_FILE)

    @property
    def embeddings_path(self):
        return os.path.join(self.path, EMBEDDINGS_FILE)

    def load(self):
        """Load the sample's graph and records."""
        return load_sample(self.edges_path, self.records_path,
                           sample_id=self.sample_id, label=self.label)


class CorpusIndex(object):
    """Per-sample metadata of a corpus, ordered by sample id.

    Attributes
    ----------
    entries : [:py:class:`.CorpusEntry`, ...]
    skipped : int
        Number of sample directories which could not be indexed.
    """

    def __init__(self, entries=(), skipped=0):
        self.entries = sorted(entries, key=lambda e: e.sample_id)
        self.skipped = skipped
        self._by_id = {}
        for entry in self.entries:
            if entry.sample_id in self._by_id:
                raise FcgError("duplicate sample id {}".format(
                    entry.sample_id))
            if entry.node_count < 1:
                raise FcgError("sample {} has no nodes".format(
                    entry.sample_id))
            self._by_id[entry.sample_id] = entry

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __contains__(self, sample_id):
        return sample_id in self._by_id

    def __getitem__(self, sample_id):
        return self._by_id[sample_id]

    def labels(self):
        """The sorted set of labels present in the corpus."""
        return sorted(set(e.label for e in self.entries))

    def to_json(self):
        return {"entries": [dict(e._asdict()) for e in self.entries],
                "skipped": self.skipped}

    @classmethod
    def from_json(cls, d):
        return cls([CorpusEntry(**e) for e in d["entries"]],
                   d.get("skipped", 0))

    def save(self, path):
        with io.open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f, indent=1, sort_keys=True)
            f.write(u"\n")

    @classmethod
    def load(cls, path):
        with io.open(path, "r", encoding="utf-8") as f:
            try:
                return cls.from_json(json.load(f))
            except FcgError:
                raise
            except (KeyError, TypeError, AttributeError, ValueError) as e:
                raise FcgError("{} is not a corpus index ({!r})".format(
                    path, e))


def _subdirs(path):
    return sorted(d for d in os.listdir(path)
                  if os.path.isdir(os.path.join(path, d)))


def scan_corpus(root):
    """Index every ``<family>/<type>/<sample_id>`` directory under ``root``.

    Samples missing their edge or record file, whose records cannot be
    read, or whose id was already indexed under an earlier family or type
    are skipped with a warning and counted in ``index.skipped``.
    """
    entries = []
    seen = {}
    skipped = 0
    for family in _subdirs(root):
        for type_ in _subdirs(os.path.join(root, family)):
            type_dir = os.path.join(root, family, type_)
            for sample_id in _subdirs(type_dir):
                path = os.path.join(type_dir, sample_id)
                try:
                    if sample_id in seen:
                        raise IOError("duplicate sample id (first at {})"
                                      .format(seen[sample_id]))
                    if not os.path.isfile(os.path.join(path, EDGES_FILE)):
                        raise IOError("missing {}".format(EDGES_FILE))
                    node_count = count_records(os.path.join(path,
                                                            RECORDS_FILE))
                    if node_count < 1:
                        raise IOError("no records")
                except (IOError, OSError) as e:
                    logger.warning("Skipping sample {}: {}".format(path, e))
                    skipped += 1
                    continue
                seen[sample_id] = path
                entries.append(CorpusEntry(sample_id, family, type_,
                                           node_count, path))
    logger.info("Indexed {} samples ({} skipped) under {}".format(
        len(entries), skipped, root))
    return CorpusIndex(entries, skipped)
