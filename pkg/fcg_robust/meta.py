"""Aggregated per-function metadata features.

Adapts the EMBER static feature set to individual functions of an Android
app: names and signatures are hashed, code bytes summarised by byte and
byte/entropy histograms, and string literals by character statistics and
keyword counters. The layout of the resulting 936-dimensional vector is
given by :py:data:`.META_GROUPS`.
"""

import re

import numpy as np

from fcg_robust.hashing import HASH_WIDTH, hash_tokens

from fcg_robust.records import ACCESS_FLAGS


"""(name, width, universal) of every metadata feature group, in order.

Only the first five groups (names and signature) exist for every function,
external ones included.
"""
META_GROUPS = (
    ("class_name", HASH_WIDTH, True),
    ("method_name", HASH_WIDTH, True),
    ("num_params", 1, True),
    ("param_types", HASH_WIDTH, True),
    ("return_type", HASH_WIDTH, True),
    ("access_flags", len(ACCESS_FLAGS), False),
    ("num_registers", 1, False),
    ("code_length", 1, False),
    ("byte_histogram", 256, False),
    ("byte_entropy_histogram", 256, False),
    ("instr_count", 1, False),
    ("opcode_names", HASH_WIDTH, False),
    ("has_invalid_chars", 1, False),
    ("string_literals", HASH_WIDTH, False),
    ("num_strings", 1, False),
    ("avg_string_length", 1, False),
    ("char_histogram", 96, False),
    ("char_entropy", 1, False),
    ("external_paths", 1, False),
    ("urls", 1, False),
    ("ips", 1, False),
    ("registry_mods", 1, False),
    ("in_memory_exec", 1, False),
    ("instructions_cached", 1, False),
)

META_DIM = sum(width for _, width, _ in META_GROUPS)

ENTROPY_WINDOW = 2048
ENTROPY_STEP = 1024

REGISTRY_KEYWORDS = ("/shared_prefs/", "Settings.Secure", "Settings.System",
                     "Settings.Global")
IN_MEMORY_EXEC_KEYWORDS = ("ClassLoader", "DexFile", "loadDex", "loadClass",
                           "defineClass", "loadLibrary")

_OCTET = r"([0-9]{1,3})"
_IP_RE = re.compile(r"(?<![0-9])" + r"\.".join([_OCTET] * 4) + r"(?![0-9])")

# printable ASCII plus tab, LF and CR
_VALID_BYTES = np.zeros(256, dtype=bool)
_VALID_BYTES[0x20:0x7f] = True
_VALID_BYTES[[0x09, 0x0a, 0x0d]] = True


def _entropy_bits(counts):
    """Shannon entropy (bits) of a histogram of counts."""
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts[counts > 0] / total
    return float(-np.sum(p * np.log2(p)))


def _normalise(counts):
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return np.zeros(len(counts))
    return counts / total


def byte_histogram(data):
    """Distribution of byte values (256 bins); all-zero for empty input."""
    a = np.frombuffer(bytes(data), dtype=np.uint8)
    return _normalise(np.bincount(a, minlength=256))


def byte_entropy_histogram(data, window=ENTROPY_WINDOW, step=ENTROPY_STEP):
    """Joint distribution of local entropy and byte value (16 x 16, flattened
    entropy-major).

    For each window of ``window`` bytes (stepping by ``step``; the whole input
    when shorter than a window) the Shannon entropy ``H`` (bits, 0-8) of its
    byte values selects the row ``min(15, floor(2H))`` to which the window's
    high-nibble counts are added.
    """
    a = np.frombuffer(bytes(data), dtype=np.uint8)
    output = np.zeros((16, 16), dtype=np.int64)
    if len(a) == 0:
        return np.zeros(256)
    if len(a) < window:
        blocks = [a]
    else:
        blocks = [a[start:start + window]
                  for start in range(0, len(a) - window + 1, step)]
    for block in blocks:
        entropy = _entropy_bits(np.bincount(block, minlength=256))
        entropy_bin = min(15, int(np.floor(entropy * 2)))
        output[entropy_bin, :] += np.bincount(block >> 4, minlength=16)
    return _normalise(output.ravel())


def _has_ip(string):
    for match in _IP_RE.finditer(string):
        if all(int(part) <= 255 for part in match.groups()):
            return True
    return False


def string_stats(strings):
    """Summary statistics of a function's string literals.

    Returns
    -------
    dict
        ``num_strings``, ``avg_string_length`` (mean UTF-8 byte length),
        ``char_histogram`` (96 bins: printable ASCII then "other"),
        ``char_entropy`` (bits), ``has_invalid_chars`` and the counters
        ``external_paths``, ``urls``, ``ips``, ``registry_mods`` and
        ``in_memory_exec`` (number of strings matching, each counted once).
    """
    strings = list(strings)
    encoded = [s.encode("utf-8") for s in strings]

    char_counts = np.zeros(96, dtype=np.int64)
    for s in strings:
        codes = np.fromiter((ord(c) for c in s), dtype=np.int64, count=len(s))
        bins = np.where((codes >= 0x20) & (codes <= 0x7e), codes - 0x20, 95)
        char_counts += np.bincount(bins, minlength=96)

    all_bytes = np.frombuffer(b"".join(encoded), dtype=np.uint8)

    return {
        "num_strings": len(strings),
        "avg_string_length": (float(np.mean([len(e) for e in encoded]))
                              if encoded else 0.0),
        "char_histogram": _normalise(char_counts),
        "char_entropy": _entropy_bits(char_counts),
        "has_invalid_chars": float(not _VALID_BYTES[all_bytes].all()),
        "external_paths": sum(1 for s in strings if s.startswith("/")),
        "urls": sum(1 for s in strings
                    if "http://" in s or "https://" in s),
        "ips": sum(1 for s in strings if _has_ip(s)),
        "registry_mods": sum(1 for s in strings
                             if any(k in s for k in REGISTRY_KEYWORDS)),
        "in_memory_exec": sum(1 for s in strings
                              if any(k in s for k in IN_MEMORY_EXEC_KEYWORDS)),
    }


def meta_features(record):
    """The metadata feature vector of one function record.

    Numeric values are kept as is (no normalisation). Groups whose source
    field is unavailable (always the case for external functions) are
    marked missing and left zero.

    Returns
    -------
    (vector, present)
        ``vector`` is a float64 array of length :py:data:`.META_DIM`;
        ``present`` a bool array with one flag per entry of
        :py:data:`.META_GROUPS`.
    """
    values = {
        "class_name": hash_tokens(record.class_name),
        "method_name": hash_tokens([record.method_name]),
        "num_params": record.num_params,
        "param_types": hash_tokens(record.param_types),
        "return_type": hash_tokens([record.return_type]),
    }

    if not record.external:
        values["access_flags"] = [float(f in record.access_flags)
                                  for f in ACCESS_FLAGS]
        if record.num_registers is not None:
            values["num_registers"] = record.num_registers

        if record.code is not None:
            values["code_length"] = record.code.length
            values["byte_histogram"] = byte_histogram(record.code.bytes)
            values["byte_entropy_histogram"] = byte_entropy_histogram(
                record.code.bytes)

        if record.instructions is not None:
            values["instr_count"] = record.instructions.count
            values["opcode_names"] = hash_tokens(record.instructions.opcodes)
            values["instructions_cached"] = float(record.instructions.cached)

        if record.strings is not None:
            values.update(string_stats(record.strings))
            values["string_literals"] = hash_tokens(record.strings)

    vector = np.zeros(META_DIM)
    present = np.zeros(len(META_GROUPS), dtype=bool)
    offset = 0
    for num, (name, width, _) in enumerate(META_GROUPS):
        if name in values:
            vector[offset:offset + width] = values[name]
            present[num] = True
        offset += width
    return vector, present
