"""Attributed function call graphs and their feature schemas.

An :py:class:`.AttributedGraph` couples the (directed, 0/1) adjacency of a
function call graph with a node feature matrix whose columns are described
by a :py:class:`.FeatureSchema`. Feature availability is tracked per
(node, feature group): a node either has a whole group (e.g. its byte
histogram) or lacks it entirely.
"""

import io

import logging

from collections import namedtuple

import numpy as np

from fcg_robust.errors import BoundsError, FcgError, ParseError

from fcg_robust.hashing import fnv1a_64

from fcg_robust.records import read_records


logger = logging.getLogger(__name__)


class FeatureGroup(namedtuple("FeatureGroup",
                              "name offset width universal")):
    """A contiguous block of feature columns."""

    __slots__ = ()

    @property
    def stop(self):
        return self.offset + self.width

    def to_dict(self):
        return {"name": self.name, "offset": self.offset,
                "width": self.width, "universal": self.universal}


class FeatureSchema(object):
    """An ordered list of feature groups.

    Schemas may be built from ``(name, width, universal)`` triples, in which
    case offsets are assigned contiguously, or from
    :py:class:`.FeatureGroup`\\ s whose offsets are checked::

        >>> s = FeatureSchema([("class_name", 50, True), ("llm", 8, False)])
        >>> s.dim
        58
        >>> s["llm"].offset
        50
    """

    def __init__(self, groups):
        self.groups = []
        offset = 0
        for group in groups:
            if isinstance(group, FeatureGroup):
                if group.offset != offset:
                    raise FcgError(
                        "feature group {} starts at {}, expected {}".format(
                            group.name, group.offset, offset))
                name, width, universal = (group.name, group.width,
                                          group.universal)
            else:
                name, width, universal = group
            if width < 1:
                raise FcgError(
                    "feature group {} has width {}".format(name, width))
            self.groups.append(FeatureGroup(str(name), offset, int(width),
                                            bool(universal)))
            offset += width
        self.groups = tuple(self.groups)
        self.dim = offset

        self._index = {}
        for num, group in enumerate(self.groups):
            if group.name in self._index:
                raise FcgError(
                    "duplicate feature group {}".format(group.name))
            self._index[group.name] = num

    def __len__(self):
        return len(self.groups)

    def __iter__(self):
        return iter(self.groups)

    def __contains__(self, name):
        return name in self._index

    def __getitem__(self, name):
        return self.groups[self._index[name]]

    def __eq__(self, other):
        return isinstance(other, FeatureSchema) and self.groups == other.groups

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "<FeatureSchema {} groups, d={}>".format(len(self), self.dim)

    @property
    def names(self):
        return [g.name for g in self.groups]

    def index(self, name):
        """The position of a group within the schema."""
        return self._index[name]

    @property
    def schema_hash(self):
        """The FNV-1a 64 digest of the ordered group list (16 hex digits)."""
        canonical = "".join("{}:{}:{}:{};".format(g.name, g.offset, g.width,
                                                  int(g.universal))
                            for g in self.groups)
        return "{:016x}".format(fnv1a_64(canonical))

    def columns(self, names=None):
        """The column indices covered by the named groups (default: all),
        in schema order."""
        if names is None:
            return np.arange(self.dim)
        names = set(names)
        cols = [np.arange(g.offset, g.stop)
                for g in self.groups if g.name in names]
        if not cols:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate(cols)

    def column_groups(self):
        """For every column, the index of the group it belongs to."""
        return np.repeat(np.arange(len(self.groups)),
                         [g.width for g in self.groups])

    def select(self, names):
        """A new schema keeping only the named groups, in schema order."""
        names = set(names)
        return FeatureSchema([(g.name, g.width, g.universal)
                              for g in self.groups if g.name in names])

    def to_json(self):
        return [g.to_dict() for g in self.groups]

    @classmethod
    def from_json(cls, groups):
        return cls([FeatureGroup(g["name"], int(g["offset"]), int(g["width"]),
                                 bool(g["universal"]))
                    for g in groups])


class AttributedGraph(object):
    """A function call graph ``G = (A, X)`` with a group-level presence mask.

    Parameters
    ----------
    n : int
        Number of nodes (functions).
    edges : array-like of shape (E, 2)
        Directed edges ``(caller, callee)``. Duplicates are collapsed;
        self-loops are kept.
    features : :py:class:`numpy.ndarray` (n, d) float32 or None
        Node feature matrix. Entries of masked-out groups are undefined.
    mask : :py:class:`numpy.ndarray` (n, G) bool or None
        ``mask[i, g]`` is True iff group ``g`` is present for node ``i``.
    schema : :py:class:`.FeatureSchema` or None
    label : :py:class:`~fcg_robust.records.Label` or None
    sample_id : str
    records : [:py:class:`~fcg_robust.records.FunctionRecord`, ...] or None
        The raw per-node records the features derive from (when loaded).
    """

    def __init__(self, n, edges=(), features=None, mask=None, schema=None,
                 label=None, sample_id="", records=None):
        self.n = int(n)
        self.edges = _normalise_edges(edges, self.n)
        self.sample_id = sample_id
        self.label = label
        self.records = records
        self.schema = schema

        if features is not None:
            features = np.ascontiguousarray(features, dtype=np.float32)
            if schema is None:
                raise FcgError("features given without a schema")
            if features.shape != (self.n, schema.dim):
                raise FcgError(
                    "sample {}: feature matrix shape {} does not match "
                    "({}, {})".format(sample_id, features.shape, self.n,
                                      schema.dim))
            if mask is None:
                mask = np.ones((self.n, len(schema)), dtype=bool)
            mask = np.ascontiguousarray(mask, dtype=bool)
            if mask.shape != (self.n, len(schema)):
                raise FcgError(
                    "sample {}: mask shape {} does not match ({}, {})".format(
                        sample_id, mask.shape, self.n, len(schema)))
            features.setflags(write=False)
            mask.setflags(write=False)
        self.features = features
        self.mask = mask

    def __repr__(self):
        return "<AttributedGraph {} n={} edges={} d={}>".format(
            self.sample_id, self.n, len(self.edges),
            None if self.schema is None else self.schema.dim)

    @property
    def num_edges(self):
        return len(self.edges)

    @property
    def dim(self):
        return 0 if self.schema is None else self.schema.dim

    @property
    def is_complete(self):
        """True when no feature entry is undefined."""
        return self.mask is not None and bool(self.mask.all())

    def adjacency(self):
        """The dense n x n 0/1 adjacency matrix."""
        a = np.zeros((self.n, self.n), dtype=np.int8)
        if len(self.edges):
            a[self.edges[:, 0], self.edges[:, 1]] = 1
        return a

    def column_mask(self):
        """The per-entry (n, d) presence mask expanded from group masks."""
        return self.mask[:, self.schema.column_groups()]

    def with_features(self, features, mask, schema):
        """A copy of this graph carrying the given features."""
        return AttributedGraph(self.n, self.edges, features, mask, schema,
                               self.label, self.sample_id, self.records)

    def replace(self, **kwargs):
        """A copy of this graph with the given attributes replaced."""
        attrs = dict(n=self.n, edges=self.edges, features=self.features,
                     mask=self.mask, schema=self.schema, label=self.label,
                     sample_id=self.sample_id, records=self.records)
        attrs.update(kwargs)
        return AttributedGraph(**attrs)


def _normalise_edges(edges, n):
    edges = np.asarray(edges, dtype=np.int64)
    if edges.size == 0:
        edges = np.zeros((0, 2), dtype=np.int64)
    edges = edges.reshape(-1, 2)
    if len(edges):
        bad = edges[(edges < 0) | (edges >= n)]
        if len(bad):
            raise BoundsError(int(bad[0]), n)
        edges = np.unique(edges, axis=0)
    edges.setflags(write=False)
    return edges


def read_edges(path):
    """Parse an edge-list file of ``"src dst"`` lines.

    Returns
    -------
    :py:class:`numpy.ndarray` (E, 2) int64
        The edges in file order (duplicates not yet collapsed).
    """
    edges = []
    with io.open(path, "rb") as f:
        for line_number, raw in enumerate(f, 1):
            try:
                line = raw.decode("ascii")
            except UnicodeDecodeError:
                raise ParseError(path, line_number,
                                 "non-ASCII bytes in {!r}".format(raw))
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 2:
                raise ParseError(path, line_number,
                                 "expected 'src dst', got {!r}".format(line))
            try:
                src, dst = int(fields[0], 10), int(fields[1], 10)
            except ValueError:
                raise ParseError(path, line_number,
                                 "non-integer endpoint in {!r}".format(line))
            if src < 0 or dst < 0:
                raise ParseError(path, line_number,
                                 "negative endpoint in {!r}".format(line))
            edges.append((src, dst))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def write_edges(edges, path):
    """Write edges as ``"src dst"`` lines, in the order given."""
    with io.open(path, "w", encoding="ascii", newline="\n") as f:
        for src, dst in edges:
            f.write(u"{} {}\n".format(int(src), int(dst)))


def load_sample(edges_path, records_path, sample_id="", label=None):
    """Load a sample's call graph and function records.

    The node count is the number of records; edges are deduplicated and
    self-loops kept. Features are left unpopulated.

    Raises
    ------
    :py:class:`~fcg_robust.errors.ParseError`
        On a malformed edge or record line.
    :py:class:`~fcg_robust.errors.BoundsError`
        If an edge endpoint is not a node.
    :py:class:`~fcg_robust.errors.RecordValidationError`
        If a record violates its invariants.
    """
    records = read_records(records_path)
    edges = read_edges(edges_path)
    g = AttributedGraph(len(records), edges, sample_id=sample_id, label=label,
                        records=records)
    logger.debug("Loaded sample {} with {} nodes and {} edges".format(
        sample_id, g.n, g.num_edges))
    return g
