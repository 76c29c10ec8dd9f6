"""Exceptions raised by fcg-robust.

Every exception derives from :py:class:`.FcgError`, itself a
:py:class:`ValueError`, so callers may catch either. Exceptions carry the
structured details needed by the command-line front end to produce a
machine-readable error report (see :py:meth:`.FcgError.details`).
"""


def _restore(cls, args, state):
    e = cls.__new__(cls)
    e.args = args
    e.__dict__.update(state)
    return e


class FcgError(ValueError):
    """Base class of all fcg-robust errors."""

    def details(self):
        """A JSON-able dictionary of error specifics (may be empty)."""
        return {}

    def __reduce__(self):
        # Subclass constructors take structured arguments, not the message.
        return _restore, (type(self), self.args, self.__dict__)


class ParseError(FcgError):
    """A line of an input text file could not be parsed."""

    def __init__(self, path, line_number, message):
        super(ParseError, self).__init__(
            "{}:{}: {}".format(path, line_number, message))
        self.path = str(path)
        self.line_number = line_number

    def details(self):
        return {"path": self.path, "line": self.line_number}


class BoundsError(FcgError):
    """An edge endpoint (or node id) lies outside [0, n)."""

    def __init__(self, endpoint, n, what="edge endpoint"):
        super(BoundsError, self).__init__(
            "{} {} out of range for {} nodes".format(what, endpoint, n))
        self.endpoint = endpoint
        self.n = n

    def details(self):
        return {"endpoint": self.endpoint, "n": self.n}


class RecordValidationError(FcgError):
    """A function record violates one of its invariants."""

    def __init__(self, node, message):
        super(RecordValidationError, self).__init__(
            "node {}: {}".format(node, message))
        self.node = node

    def details(self):
        return {"node": self.node}


class FormatError(FcgError):
    """A binary artifact has a bad magic, is truncated or is inconsistent."""


class SchemaMismatchError(FormatError):
    """A feature matrix was written against a different feature schema."""

    def __init__(self, expected, actual):
        super(SchemaMismatchError, self).__init__(
            "schema hash {} does not match expected {}".format(
                actual, expected))
        self.expected = expected
        self.actual = actual

    def details(self):
        return {"expected": self.expected, "actual": self.actual}


class EmbeddingError(FcgError):
    """An embedding table is inconsistent with its graph."""


class ConfigError(FcgError):
    """A configuration failed validation.

    All violations found are reported together rather than only the first.
    """

    def __init__(self, violations):
        violations = list(violations)
        super(ConfigError, self).__init__(
            "invalid configuration: {}".format("; ".join(violations)))
        self.violations = violations

    def details(self):
        return {"violations": self.violations}


class CollationError(FcgError):
    """A collation scheme cannot produce a usable graph."""

    def __init__(self, sample_id, message):
        super(CollationError, self).__init__(
            "sample {}: {}".format(sample_id, message))
        self.sample_id = sample_id

    def details(self):
        return {"sample_id": self.sample_id}


class ShapeError(FcgError):
    """Tensor shapes are incompatible with an operation."""


class NumericalError(FcgError):
    """An optimizer step produced a non-finite parameter value."""

    def __init__(self, parameter):
        super(NumericalError, self).__init__(
            "non-finite value in update of parameter {}".format(parameter))
        self.parameter = parameter

    def details(self):
        return {"parameter": self.parameter}


class WidthMismatchError(FcgError):
    """Feature width of a graph does not match the model input width."""

    def __init__(self, expected, actual, sample_id=None):
        message = "feature width {} does not match expected width {}".format(
            actual, expected)
        if sample_id is not None:
            message = "sample {}: {}".format(sample_id, message)
        super(WidthMismatchError, self).__init__(message)
        self.expected = expected
        self.actual = actual
        self.sample_id = sample_id

    def details(self):
        return {"expected": self.expected, "actual": self.actual,
                "sample_id": self.sample_id}


class EmptySplitError(FcgError):
    """A dataset split (or batch) has no samples."""


class UnsupportedMethodError(FcgError):
    """An adaptation method cannot be applied to the given model."""


class ClassCountError(FcgError):
    """Target classes differ from the model's without classifier reset."""


class InsufficientCandidatesError(FcgError):
    """A benchmark class has fewer candidates than requested."""

    def __init__(self, class_id, available, requested):
        super(InsufficientCandidatesError, self).__init__(
            "class {}: {} candidates available, {} requested "
            "(short by {})".format(class_id, available, requested,
                                   requested - available))
        self.class_id = class_id
        self.shortfall = requested - available

    def details(self):
        return {"class_id": self.class_id, "shortfall": self.shortfall}


class LabelTableError(FcgError):
    """A benchmark label table is malformed or has overlapping rows."""
