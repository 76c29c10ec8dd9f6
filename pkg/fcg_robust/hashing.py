"""Signed feature hashing ("the hashing trick") over FNV-1a 64-bit digests,
and SHA-256 digests of run inputs."""

import hashlib

import os

import numpy as np

FNV64_OFFSET_BASIS = 0xcbf29ce484222325
FNV64_PRIME = 0x100000001b3
MASK64 = 0xffffffffffffffff

"""Width of every hashed string/string-list feature group."""
HASH_WIDTH = 50


def fnv1a_64(data):
    """The 64-bit FNV-1a digest of a byte string (or UTF-8 encoded str)."""
    if not isinstance(data, bytes):
        data = data.encode("utf-8")
    h = FNV64_OFFSET_BASIS
    for byte in bytearray(data):
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


def hash_tokens(tokens, width=HASH_WIDTH):
    """Hash a token list into a fixed-width signed count vector.

    Each token ``t`` contributes ``+1`` to slot ``fnv1a_64(t) % width`` when
    bit 63 of its digest is clear, and ``-1`` otherwise. Hashing is additive:
    ``hash_tokens(a + b) == hash_tokens(a) + hash_tokens(b)``.

    Parameters
    ----------
    tokens : [str, ...]
    width : int

    Returns
    -------
    :py:class:`numpy.ndarray`
        float64 vector of length ``width``.
    """
    out = np.zeros(width, dtype=np.float64)
    for token in tokens:
        h = fnv1a_64(token)
        out[h % width] += -1.0 if h >> 63 else 1.0
    return out


def sha256_path(path, ignore=()):
    """SHA-256 hex digest of a file, or of a directory tree.

    A directory digests every file below it, in sorted relative path order,
    as ``<relative path>\\0<file digest>\\n``. Files whose base name is in
    ``ignore`` are skipped.
    """
    if not os.path.isdir(path):
        h = hashlib.sha256()
        with open(path, "rb") as f:
            for chunk in iter(lambda: f.read(1 << 20), b""):
                h.update(chunk)
        return h.hexdigest()

    files = []
    for dirpath, _, filenames in os.walk(path):
        for filename in filenames:
            if filename not in ignore:
                full = os.path.join(dirpath, filename)
                files.append(os.path.relpath(full, path).replace(os.sep, "/"))
    h = hashlib.sha256()
    for relative in sorted(files):
        h.update(relative.encode("utf-8"))
        h.update(b"\0")
        h.update(sha256_path(os.path.join(path, relative)).encode("ascii"))
        h.update(b"\n")
    return h.hexdigest()
