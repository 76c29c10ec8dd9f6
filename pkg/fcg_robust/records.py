"""Per-function analysis records and malware labels.

A sample's functions are stored one JSON object per line (JSON Lines, UTF-8),
with line ``i`` describing node ``i`` of the function call graph. Field names
match the attributes of :py:class:`.FunctionRecord`; raw code bytes are
carried base64-encoded in ``code["bytes_b64"]``.
"""

import base64

import io

import json

from collections import namedtuple

from fcg_robust.errors import FcgError, ParseError, RecordValidationError


"""The 14 method access flags, in multi-hot order."""
ACCESS_FLAGS = ("public", "private", "protected", "static", "final",
                "synchronized", "bridge", "varargs", "native", "interface",
                "abstract", "strictfp", "synthetic", "constructor")


class Label(namedtuple("Label", "family type")):
    """A malware class: a (family, type) pair."""

    __slots__ = ()

    def __new__(cls, family, type):
        if not family or not type:
            raise FcgError("label family and type must be non-empty, "
                           "got {!r}/{!r}".format(family, type))
        return super(Label, cls).__new__(cls, family, type)

    def __str__(self):
        return "{}/{}".format(self.family, self.type)


"""Raw code of a function."""
Code = namedtuple("Code", "length bytes")

"""Decoded instruction listing of a function."""
Instructions = namedtuple("Instructions", "count opcodes cached")


class FunctionRecord(object):
    """Raw static-analysis output for one function (one FCG node).

    External functions (e.g. framework APIs called by the app) carry only
    their names and signature: ``code``, ``instructions`` and ``strings``
    must be ``None`` for them.
    """

    __slots__ = ("class_name", "method_name", "num_params", "param_types",
                 "return_type", "access_flags", "num_registers", "code",
                 "instructions", "strings", "external")

    def __init__(self, class_name, method_name, param_types=(),
                 return_type="void", access_flags=(), num_registers=None,
                 code=None, instructions=None, strings=None, external=False,
                 num_params=None):
        self.class_name = tuple(class_name)
        self.method_name = method_name
        self.param_types = tuple(param_types)
        self.num_params = (len(self.param_types) if num_params is None
                           else num_params)
        self.return_type = return_type
        self.access_flags = frozenset(access_flags)
        self.num_registers = num_registers
        self.code = code
        self.instructions = instructions
        self.strings = None if strings is None else tuple(strings)
        self.external = bool(external)

    def validate(self, node=None):
        """Check the record invariants, raising
        :py:class:`~fcg_robust.errors.RecordValidationError` naming ``node``.
        """
        if not isinstance(self.num_params, int) or self.num_params < 0:
            raise RecordValidationError(
                node, "num_params must be a non-negative integer")
        if self.num_params != len(self.param_types):
            raise RecordValidationError(
                node, "num_params is {} but {} param_types given".format(
                    self.num_params, len(self.param_types)))
        unknown = self.access_flags.difference(ACCESS_FLAGS)
        if unknown:
            raise RecordValidationError(
                node, "unknown access flags {}".format(sorted(unknown)))
        if self.num_registers is not None and self.num_registers < 0:
            raise RecordValidationError(
                node, "num_registers must be non-negative")
        if self.code is not None and self.code.length != len(self.code.bytes):
            raise RecordValidationError(
                node, "code length is {} but {} bytes given".format(
                    self.code.length, len(self.code.bytes)))
        if self.external and (self.code is not None or
                              self.instructions is not None or
                              self.strings is not None):
            raise RecordValidationError(
                node, "external functions carry no code, instructions or "
                      "strings")

    def __eq__(self, other):
        return (type(self) is type(other) and
                all(getattr(self, f) == getattr(other, f)
                    for f in self.__slots__))

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "<FunctionRecord {}.{}{}>".format(
            ".".join(self.class_name), self.method_name,
            " (external)" if self.external else "")

    def to_dict(self):
        """The JSON-able representation written to record files."""
        d = {
            "class_name": list(self.class_name),
            "method_name": self.method_name,
            "num_params": self.num_params,
            "param_types": list(self.param_types),
            "return_type": self.return_type,
            "access_flags": [f for f in ACCESS_FLAGS
                             if f in self.access_flags],
            "num_registers": self.num_registers,
            "code": None,
            "instructions": None,
            "strings": None if self.strings is None else list(self.strings),
            "external": self.external,
        }
        if self.code is not None:
            d["code"] = {
                "length": self.code.length,
                "bytes_b64": base64.b64encode(
                    self.code.bytes).decode("ascii"),
            }
        if self.instructions is not None:
            d["instructions"] = {
                "count": self.instructions.count,
                "opcodes": list(self.instructions.opcodes),
                "cached": self.instructions.cached,
            }
        return d

    @classmethod
    def from_dict(cls, d):
        """Build a record from its JSON object (no validation)."""
        code = d.get("code")
        if code is not None:
            raw = base64.b64decode(code.get("bytes_b64", ""), validate=True)
            code = Code(int(code.get("length", len(raw))), raw)
        instructions = d.get("instructions")
        if instructions is not None:
            opcodes = tuple(instructions.get("opcodes", ()))
            instructions = Instructions(
                int(instructions.get("count", len(opcodes))),
                opcodes,
                bool(instructions.get("cached", False)))
        return cls(class_name=d["class_name"],
                   method_name=d["method_name"],
                   num_params=d.get("num_params"),
                   param_types=d.get("param_types", ()),
                   return_type=d.get("return_type", "void"),
                   access_flags=d.get("access_flags", ()),
                   num_registers=d.get("num_registers"),
                   code=code,
                   instructions=instructions,
                   strings=d.get("strings"),
                   external=d.get("external", False))


def read_records(path):
    """Read and validate a JSON Lines record file.

    Blank lines are skipped, as by :py:func:`.count_records`.

    Returns
    -------
    [:py:class:`.FunctionRecord`, ...]
        One record per non-blank line, indexed by node id.
    """
    records = []
    with io.open(path, "rb") as f:
        for line_number, raw in enumerate(f, 1):
            if not raw.strip():
                continue
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as e:
                raise ParseError(path, line_number,
                                 "invalid UTF-8 ({})".format(e))
            try:
                record = FunctionRecord.from_dict(json.loads(line))
            except (ValueError, KeyError, TypeError, AttributeError) as e:
                raise ParseError(path, line_number,
                                 "malformed record ({})".format(e))
            record.validate(len(records))
            records.append(record)
    return records


def write_records(records, path):
    """Write records as JSON Lines (one object per line, LF-terminated)."""
    with io.open(path, "w", encoding="utf-8", newline="\n") as f:
        for record in records:
            f.write(json.dumps(record.to_dict(), sort_keys=True,
                               ensure_ascii=False))
            f.write("\n")


def count_records(path):
    """Count the records in a file without parsing them."""
    with io.open(path, "rb") as f:
        return sum(1 for line in f if line.strip())
