"""Binary artifact formats: feature matrices (.fmx) and embeddings (.emb).

Both formats start with a single-line JSON header terminated by LF followed
by a little-endian binary payload.

Feature matrix (``.fmx``)::

    {"magic":"FMX1","rows":R,"cols":D,"dtype":"f32le","groups":[...],
     "schema_hash":"..."}\\n
    R x D little-endian float32, row-major
    R rows of ceil(G/8) mask bytes, bit g (LSB first) set iff group g present

Embedding table (``.emb``)::

    {"magic":"EMB1","dim":E,"count":K}\\n
    K x (node id as little-endian uint32, E little-endian float32)
"""

import io

import json

from collections import OrderedDict

import numpy as np

from fcg_robust.errors import (BoundsError, EmbeddingError, FormatError,
                               SchemaMismatchError)

from fcg_robust.graph import FeatureSchema


FMX_MAGIC = "FMX1"
EMB_MAGIC = "EMB1"


def _header_line(fields):
    return (json.dumps(OrderedDict(fields), separators=(",", ":")) +
            "\n").encode("utf-8")


def _split_header(data, path):
    newline = data.find(b"\n")
    if newline < 0:
        raise FormatError("{}: missing header line".format(path))
    try:
        header = json.loads(data[:newline].decode("utf-8"))
    except ValueError as e:
        raise FormatError("{}: unreadable header ({})".format(path, e))
    if not isinstance(header, dict):
        raise FormatError("{}: header is not an object".format(path))
    return header, data[newline + 1:]


def encode_feature_matrix(features, mask, schema):
    """Serialise a masked feature matrix to bytes."""
    features = np.asarray(features, dtype="<f4")
    mask = np.asarray(mask, dtype=bool)
    rows, cols = features.shape
    if cols != schema.dim:
        raise FormatError("matrix width {} does not match schema dimension "
                          "{}".format(cols, schema.dim))
    if mask.shape != (rows, len(schema)):
        raise FormatError("mask shape {} does not match ({}, {})".format(
            mask.shape, rows, len(schema)))
    header = _header_line([
        ("magic", FMX_MAGIC),
        ("rows", rows),
        ("cols", cols),
        ("dtype", "f32le"),
        ("groups", schema.to_json()),
        ("schema_hash", schema.schema_hash),
    ])
    packed = np.packbits(mask, axis=1, bitorder="little")
    return header + features.tobytes(order="C") + packed.tobytes(order="C")


def mask_row_bytes(num_groups):
    return (num_groups + 7) // 8


def decode_feature_matrix(data, expected_schema=None, path="<bytes>"):
    """Parse a serialised feature matrix.

    Returns
    -------
    (features, mask, schema)
        ``features`` is (R, D) float32, ``mask`` is (R, G) bool.

    Raises
    ------
    :py:class:`~fcg_robust.errors.FormatError`
        On a magic/dtype mismatch, truncation or trailing data.
    :py:class:`~fcg_robust.errors.SchemaMismatchError`
        If the stored schema differs from ``expected_schema``.
    """
    header, payload = _split_header(data, path)
    if header.get("magic") != FMX_MAGIC:
        raise FormatError("{}: bad magic {!r}, expected {!r}".format(
            path, header.get("magic"), FMX_MAGIC))
    if header.get("dtype") != "f32le":
        raise FormatError("{}: unsupported dtype {!r}".format(
            path, header.get("dtype")))
    try:
        rows = int(header["rows"])
        cols = int(header["cols"])
        schema = FeatureSchema.from_json(header["groups"])
        stored_hash = header["schema_hash"]
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError("{}: incomplete header ({})".format(path, e))
    if schema.dim != cols:
        raise FormatError("{}: header cols {} disagree with groups "
                          "(d={})".format(path, cols, schema.dim))
    if stored_hash != schema.schema_hash:
        raise SchemaMismatchError(schema.schema_hash, stored_hash)
    if expected_schema is not None and \
            expected_schema.schema_hash != stored_hash:
        raise SchemaMismatchError(expected_schema.schema_hash, stored_hash)

    row_bytes = mask_row_bytes(len(schema))
    values_size = rows * cols * 4
    expected_size = values_size + rows * row_bytes
    if len(payload) < expected_size:
        raise FormatError("{}: truncated payload ({} of {} bytes)".format(
            path, len(payload), expected_size))
    if len(payload) > expected_size:
        raise FormatError("{}: {} trailing bytes".format(
            path, len(payload) - expected_size))

    features = np.frombuffer(payload, dtype="<f4", count=rows * cols)
    features = features.reshape(rows, cols).astype(np.float32)
    packed = np.frombuffer(payload, dtype=np.uint8, offset=values_size)
    packed = packed.reshape(rows, row_bytes)
    mask = np.unpackbits(packed, axis=1, count=len(schema),
                         bitorder="little").astype(bool)
    return features, mask, schema


def write_feature_matrix(g, path):
    """Write an attributed graph's masked feature matrix to ``path``."""
    with io.open(path, "wb") as f:
        f.write(encode_feature_matrix(g.features, g.mask, g.schema))


def read_feature_matrix(path, expected_schema=None):
    """Read a feature matrix written by :py:func:`.write_feature_matrix`.

    Returns
    -------
    (features, mask, schema)
    """
    with io.open(path, "rb") as f:
        data = f.read()
    return decode_feature_matrix(data, expected_schema, path)


class EmbeddingTable(object):
    """Per-node code embeddings for one sample.

    Only nodes with an entry have the embedding feature group.
    """

    def __init__(self, dim, entries=None):
        if dim < 1:
            raise EmbeddingError("embedding dimension must be positive")
        self.dim = int(dim)
        self.entries = OrderedDict()
        for node, vector in sorted((entries or {}).items()):
            vector = np.asarray(vector, dtype=np.float32)
            if vector.shape != (self.dim,):
                raise EmbeddingError(
                    "node {}: embedding has shape {}, expected ({},)".format(
                        node, vector.shape, self.dim))
            self.entries[int(node)] = vector

    def __len__(self):
        return len(self.entries)

    def __contains__(self, node):
        return node in self.entries

    def __getitem__(self, node):
        return self.entries[node]

    def __eq__(self, other):
        return (isinstance(other, EmbeddingTable) and
                self.dim == other.dim and
                list(self.entries) == list(other.entries) and
                all(np.array_equal(self.entries[k], other.entries[k])
                    for k in self.entries))

    def __ne__(self, other):
        return not self == other

    def check_nodes(self, n):
        """Raise :py:class:`~fcg_robust.errors.BoundsError` if any node id is
        not below ``n``."""
        for node in self.entries:
            if node >= n:
                raise BoundsError(node, n, "embedding node id")


def _emb_dtype(dim):
    return np.dtype([("node", "<u4"), ("vector", "<f4", (dim,))])


def encode_embeddings(table):
    header = _header_line([("magic", EMB_MAGIC), ("dim", table.dim),
                           ("count", len(table))])
    records = np.zeros(len(table), dtype=_emb_dtype(table.dim))
    for num, (node, vector) in enumerate(table.entries.items()):
        records[num]["node"] = node
        records[num]["vector"] = vector
    return header + records.tobytes()


def decode_embeddings(data, path="<bytes>"):
    header, payload = _split_header(data, path)
    if header.get("magic") != EMB_MAGIC:
        raise FormatError("{}: bad magic {!r}, expected {!r}".format(
            path, header.get("magic"), EMB_MAGIC))
    try:
        dim = int(header["dim"])
        count = int(header["count"])
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError("{}: incomplete header ({})".format(path, e))
    if dim < 1:
        raise EmbeddingError("{}: embedding dimension {}".format(path, dim))
    dtype = _emb_dtype(dim)
    if len(payload) != count * dtype.itemsize:
        if len(payload) < count * dtype.itemsize:
            raise FormatError("{}: truncated payload ({} of {} bytes)".format(
                path, len(payload), count * dtype.itemsize))
        raise EmbeddingError(
            "{}: payload of {} bytes is not {} entries of dimension {}".format(
                path, len(payload), count, dim))
    records = np.frombuffer(payload, dtype=dtype, count=count)
    entries = OrderedDict()
    for record in records:
        node = int(record["node"])
        if node in entries:
            raise EmbeddingError("{}: node {} listed twice".format(path, node))
        entries[node] = np.array(record["vector"], dtype=np.float32)
    return EmbeddingTable(dim, entries)


def write_embeddings(table, path):
    with io.open(path, "wb") as f:
        f.write(encode_embeddings(table))


def read_embeddings(path):
    with io.open(path, "rb") as f:
        return decode_embeddings(f.read(), path)
