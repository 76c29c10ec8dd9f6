"""Distribution shift benchmark splits.

A split draws a fixed number of samples for every class of a label table.
Each class is a family together with the malware types allowed for it;
benchmark variants differ only in their label tables:

* ``tiny``: the source distribution;
* ``common``: the same families as ``tiny`` with other types (covariate
  shift);
* ``distinct``: families (and types) unseen in ``tiny`` (domain shift).

Sampling is fully specified so that a seed reproduces a split anywhere:
candidates of a class are sorted by sample id, shuffled by Fisher-Yates
with draws from a :py:class:`.SplitMix64` generator (one stream per split,
classes in table order) and the first ``per_class`` are taken.
"""

import io

import json

import logging

from collections import OrderedDict, namedtuple

from itertools import combinations

from fcg_robust.errors import ConfigError, FcgError, \
    InsufficientCandidatesError, LabelTableError


logger = logging.getLogger(__name__)

VARIANTS = ("tiny", "common", "distinct")

_MASK64 = (1 << 64) - 1


class SplitMix64(object):
    """The SplitMix64 pseudo random generator (64-bit state)."""

    def __init__(self, seed):
        self.state = seed & _MASK64

    def next_u64(self):
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, m):
        """A draw in ``[0, m)`` (by reduction modulo ``m``)."""
        return self.next_u64() % m


def shuffle(items, rng):
    """Fisher-Yates shuffle of a copy of ``items``."""
    items = list(items)
    for i in range(len(items) - 1, 0, -1):
        j = rng.below(i + 1)
        items[i], items[j] = items[j], items[i]
    return items


class LabelRow(namedtuple("LabelRow", "class_id family types")):
    """One class of a label table: a family and its allowed types."""

    __slots__ = ()

    def pairs(self):
        return set((self.family, t) for t in self.types)

    def to_json(self):
        return OrderedDict([("class_id", self.class_id),
                            ("family", self.family),
                            ("types", list(self.types))])


class SplitSpec(object):
    """How to draw one benchmark split.

    Parameters
    ----------
    variant : "tiny", "common" or "distinct"
    label_table : [:py:class:`.LabelRow`, ...]
    per_class : int
    max_nodes : int
        Only samples with strictly fewer nodes are eligible.
    seed : int
    """

    def __init__(self, variant, label_table, per_class=1000, max_nodes=5000,
                 seed=0):
        self.variant = variant
        self.label_table = [LabelRow(str(r.class_id), r.family, tuple(r.types))
                            for r in label_table]
        self.per_class = per_class
        self.max_nodes = max_nodes
        self.seed = seed

        violations = []
        if variant not in VARIANTS:
            violations.append("bench.variant must be one of {}".format(
                VARIANTS))
        if len(self.label_table) < 2:
            violations.append("bench label table needs at least 2 classes")
        for name, minimum in (("per_class", 1), ("max_nodes", 1),
                              ("seed", 0)):
            value = getattr(self, name)
            if not isinstance(value, int) or value < minimum:
                violations.append("bench.{} must be an integer >= {}".format(
                    name, minimum))
        if violations:
            raise ConfigError(violations)
        self._check_table()

    def _check_table(self):
        seen_ids = set()
        owner = {}
        for row in self.label_table:
            if row.class_id in seen_ids:
                raise LabelTableError("duplicate class id {}".format(
                    row.class_id))
            seen_ids.add(row.class_id)
            if not row.types:
                raise LabelTableError("class {} allows no types".format(
                    row.class_id))
            for pair in sorted(row.pairs()):
                if pair in owner:
                    raise LabelTableError(
                        "{}/{} belongs to classes {} and {}".format(
                            pair[0], pair[1], owner[pair], row.class_id))
                owner[pair] = row.class_id

    def pairs(self):
        """All (family, type) pairs of the label table."""
        out = set()
        for row in self.label_table:
            out |= row.pairs()
        return out

    def families(self):
        return set(row.family for row in self.label_table)

    def to_json(self):
        return OrderedDict([
            ("variant", self.variant),
            ("classes", [r.to_json() for r in self.label_table]),
            ("per_class", self.per_class),
            ("max_nodes", self.max_nodes),
            ("seed", self.seed),
        ])

    @classmethod
    def from_json(cls, d):
        try:
            table = [LabelRow(r["class_id"], r["family"], r["types"])
                     for r in d["classes"]]
        except (KeyError, TypeError, AttributeError) as e:
            raise LabelTableError("malformed label table ({})".format(e))
        return cls(d.get("variant", "tiny"), table,
                   d.get("per_class", 1000), d.get("max_nodes", 5000),
                   d.get("seed", 0))

    @classmethod
    def load(cls, path):
        with io.open(path, "r", encoding="utf-8") as f:
            try:
                d = json.load(f)
            except ValueError as e:
                raise LabelTableError("{} is not valid JSON: {}".format(
                    path, e))
        return cls.from_json(d)


def build_split(index, spec, exclude=()):
    """Sample a benchmark split from a corpus index.

    Parameters
    ----------
    index : :py:class:`~fcg_robust.corpus.CorpusIndex`
    spec : :py:class:`.SplitSpec`
    exclude : iterable of sample ids
        Samples which may not be drawn (e.g. those of another split).

    Returns
    -------
    OrderedDict
        ``{class_id: [sample_id, ...]}`` in label table order, each list in
        draw order.

    Raises
    ------
    :py:class:`~fcg_robust.errors.InsufficientCandidatesError`
        If a class has fewer than ``spec.per_class`` eligible samples.
    """
    exclude = set(exclude)
    rng = SplitMix64(spec.seed)
    split = OrderedDict()
    for row in spec.label_table:
        pairs = row.pairs()
        candidates = sorted(e.sample_id for e in index
                            if (e.family, e.type) in pairs and
                            e.node_count < spec.max_nodes and
                            e.sample_id not in exclude)
        if len(candidates) < spec.per_class:
            raise InsufficientCandidatesError(row.class_id, len(candidates),
                                              spec.per_class)
        split[row.class_id] = shuffle(candidates, rng)[:spec.per_class]
        logger.debug("Class {}: drew {} of {} candidates".format(
            row.class_id, spec.per_class, len(candidates)))
    logger.info("Built {} split of {} classes x {}".format(
        spec.variant, len(split), spec.per_class))
    return split


def sample_classes(split):
    """``{sample_id: class_id}`` of a split."""
    return OrderedDict((sample_id, class_id)
                       for class_id, ids in split.items()
                       for sample_id in ids)


def write_split(split, path, spec=None):
    d = OrderedDict()
    if spec is not None:
        d["spec"] = spec.to_json()
    d["classes"] = split
    with io.open(path, "w", encoding="utf-8") as f:
        f.write(json.dumps(d, indent=1))
        f.write(u"\n")


def read_split(path):
    """Read a split file (or a bare ``{class_id: [ids]}`` mapping)."""
    with io.open(path, "r", encoding="utf-8") as f:
        try:
            d = json.load(f, object_pairs_hook=OrderedDict)
        except ValueError as e:
            raise FcgError("{} is not valid JSON: {}".format(path, e))
    split = d.get("classes", d) if isinstance(d, dict) else None
    if not isinstance(split, dict) or \
            not all(isinstance(ids, list) for ids in split.values()):
        raise FcgError("{} is not a split of {{class_id: [sample_id, ...]}}"
                       .format(path))
    return split


def verify_disjoint(splits, index=None):
    """Audit pairwise overlaps between splits.

    Parameters
    ----------
    splits : [{class_id: [sample_id, ...]}, ...]
    index : :py:class:`~fcg_robust.corpus.CorpusIndex` or None
        Needed to report (family, type) label overlaps.

    Returns
    -------
    OrderedDict
        ``pass`` is true iff no sample occurs in two splits;
        ``sample_overlaps`` and ``label_overlaps`` list the offending pairs
        of split positions with the shared ids or ``"family/type"`` labels.
    """
    if len(splits) < 2:
        logger.warning("Auditing fewer than two splits")
    ids = [set(sample_classes(s)) for s in splits]
    sample_overlaps = []
    label_overlaps = []
    for a, b in combinations(range(len(splits)), 2):
        shared = sorted(ids[a] & ids[b])
        if shared:
            sample_overlaps.append(OrderedDict([("a", a), ("b", b),
                                                ("ids", shared)]))
        if index is not None:
            labels_a = set(str(index[s].label) for s in ids[a] if s in index)
            labels_b = set(str(index[s].label) for s in ids[b] if s in index)
            shared = sorted(labels_a & labels_b)
            if shared:
                label_overlaps.append(OrderedDict([("a", a), ("b", b),
                                                   ("labels", shared)]))
    return OrderedDict([("pass", not sample_overlaps),
                        ("sample_overlaps", sample_overlaps),
                        ("label_overlaps", label_overlaps)])


def spec_overlap(a, b):
    """Shared families and (family, type) pairs of two split specs."""
    return OrderedDict([
        ("families", sorted(a.families() & b.families())),
        ("pairs", ["{}/{}".format(f, t)
                   for f, t in sorted(a.pairs() & b.pairs())]),
    ])
