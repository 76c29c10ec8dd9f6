"""Synthetic malware corpora with controllable distribution shift.

Every family owns a set of signature tokens from which its functions mostly
draw their class and method names; every type fixes the shape of the call
graphs (chain-, star- or randomly-wired). A structural knob chosen by
family *and* type makes topology informative within a type but misleading
across types, while token signatures persist across types. Code embeddings
encode the family linearly.

Samples are laid out as a corpus readable by
:py:func:`~fcg_robust.corpus.scan_corpus`. Each sample is generated from
its own seed, derived from the corpus seed and the sample id, so output is
independent of the number of workers.
"""

import logging

import os

import time

from collections import OrderedDict

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from tqdm import tqdm

from fcg_robust.corpus import EDGES_FILE, EMBEDDINGS_FILE, RECORDS_FILE, \
    scan_corpus

from fcg_robust.errors import ConfigError

from fcg_robust.formats import EmbeddingTable, write_embeddings

from fcg_robust.graph import write_edges

from fcg_robust.hashing import fnv1a_64

from fcg_robust.records import Code, FunctionRecord, Instructions, \
    write_records


logger = logging.getLogger(__name__)

STRUCTURES = ("chain", "star", "random")

NUM_KNOBS = 5

SHARED_TOKENS = tuple("util{:02d}".format(i) for i in range(32))

VALUE_TYPES = ("int", "boolean", "java.lang.String", "java.lang.Object",
               "android.content.Context", "byte[]")

OPCODES = ("invoke-virtual", "invoke-static", "invoke-direct", "move-result",
           "const-string", "const/4", "iget-object", "iput-object", "if-eqz",
           "goto", "new-instance", "add-int", "return-void", "return-object")

STRINGS = ("/sdcard/update.bin", "/data/data/app/shared_prefs/cfg.xml",
           "http://198.51.100.7/gate.php", "https://example.com/api",
           "10.0.0.1", "Settings.Secure", "dalvik.system.DexFile",
           "loadLibrary", "hello", "config", "%s:%d", "UTF-8")

EXTERNAL_APIS = (
    (("android", "telephony", "TelephonyManager"), "getDeviceId", (),
     "java.lang.String"),
    (("android", "content", "Context"), "getSystemService",
     ("java.lang.String",), "java.lang.Object"),
    (("java", "lang", "ClassLoader"), "loadClass", ("java.lang.String",),
     "java.lang.Class"),
    (("android", "net", "ConnectivityManager"), "getActiveNetworkInfo", (),
     "android.net.NetworkInfo"),
    (("java", "io", "File"), "delete", (), "boolean"),
    (("android", "util", "Log"), "d", ("java.lang.String",
                                       "java.lang.String"), "int"),
    (("java", "net", "URL"), "openConnection", (), "java.net.URLConnection"),
    (("android", "app", "Activity"), "onCreate", ("android.os.Bundle",),
     "void"),
    (("android", "telephony", "SmsManager"), "sendTextMessage",
     ("java.lang.String", "java.lang.String", "java.lang.String",
      "android.app.PendingIntent", "android.app.PendingIntent"), "void"),
)


class SyntheticConfig(object):
    """Shape of a synthetic corpus.

    Parameters
    ----------
    families, types : int
        Number of malware families and of types per family.
    samples_per_type : int
        Samples generated for each (family, type).
    min_nodes, max_nodes : int
        Inclusive node count range of a sample.
    external_fraction : float
        Probability that a function (other than the entry point) is an
        external API call, lacking all but the name/signature features.
    strength : float
        Probability that a name token is a family signature token rather
        than a shared one; also the magnitude of the family direction in
        code embeddings.
    structures : [str, ...] or None
        Graph shape of each type, cycled (default chain, star, random).
    seed : int
    llm_dim : int
        Code embedding width.
    signature_size : int
        Signature tokens per family.
    embedding_noise : float
        Standard deviation of the Gaussian noise added to embeddings.
    """

    FIELDS = ("families", "types", "samples_per_type", "min_nodes",
              "max_nodes", "external_fraction", "strength", "structures",
              "seed", "llm_dim", "signature_size", "embedding_noise")

    def __init__(self, families=5, types=2, samples_per_type=20,
                 min_nodes=10, max_nodes=40, external_fraction=0.3,
                 strength=0.9, structures=None, seed=0, llm_dim=64,
                 signature_size=8, embedding_noise=0.1):
        self.families = families
        self.types = types
        self.samples_per_type = samples_per_type
        self.min_nodes = min_nodes
        self.max_nodes = max_nodes
        self.external_fraction = float(external_fraction)
        self.strength = float(strength)
        self.structures = list(structures or STRUCTURES)
        self.seed = seed
        self.llm_dim = llm_dim
        self.signature_size = signature_size
        self.embedding_noise = float(embedding_noise)

        violations = []
        for name, minimum in (("families", 1), ("types", 1),
                              ("samples_per_type", 1), ("min_nodes", 1),
                              ("max_nodes", 1), ("seed", 0), ("llm_dim", 1),
                              ("signature_size", 1)):
            value = getattr(self, name)
            if not isinstance(value, int) or value < minimum:
                violations.append("synth.{} must be an integer >= {}".format(
                    name, minimum))
        if not violations and self.min_nodes > self.max_nodes:
            violations.append("synth node range [{}, {}] is empty".format(
                self.min_nodes, self.max_nodes))
        if not 0.0 <= self.external_fraction < 1.0:
            violations.append("synth.external_fraction must be in [0, 1)")
        if not 0.0 <= self.strength <= 1.0:
            violations.append("synth.strength must be in [0, 1]")
        unknown = set(self.structures).difference(STRUCTURES)
        if unknown or not self.structures:
            violations.append("synth.structures must be drawn from {}".format(
                STRUCTURES))
        if self.embedding_noise < 0:
            violations.append("synth.embedding_noise must be non-negative")
        if violations:
            raise ConfigError(violations)

    def to_json(self):
        return OrderedDict((f, getattr(self, f)) for f in self.FIELDS)

    @classmethod
    def from_json(cls, d):
        unknown = set(d).difference(cls.FIELDS)
        if unknown:
            raise ConfigError(["unknown synth key {!r}".format(k)
                               for k in sorted(unknown)])
        return cls(**d)

    def structure(self, type_index):
        return self.structures[type_index % len(self.structures)]


def family_name(f):
    return "family{:02d}".format(f)


def type_name(t):
    return "type{:02d}".format(t)


def sample_name(f, t, k):
    return "{}-{}-{:04d}".format(family_name(f), type_name(t), k)


def signature_tokens(f, size):
    return tuple("sig{:02d}x{:02d}".format(f, j) for j in range(size))


def sample_rng(seed, sample_id):
    """The generator of one sample, seeded by ``seed ^ fnv1a_64(id)``."""
    mixed = (seed ^ fnv1a_64(sample_id)) & 0xffffffffffffffff
    return np.random.RandomState([mixed & 0xffffffff, mixed >> 32])


def structure_knob(f, t):
    """The family-and-type dependent structural parameter in [0, 5)."""
    return (f + 2 * t) % NUM_KNOBS


def _choice(rng, options):
    return options[rng.randint(len(options))]


def _internal_record(rng, config, signature):
    def token():
        if rng.random_sample() < config.strength:
            return _choice(rng, signature)
        return _choice(rng, SHARED_TOKENS)

    params = [_choice(rng, VALUE_TYPES) for _ in range(rng.randint(4))]
    flags = [f for f in ("public", "private", "static", "final")
             if rng.random_sample() < 0.3]
    length = int(rng.randint(8, 257))
    code = rng.randint(0, 256, size=length).astype(np.uint8).tobytes()
    count = int(rng.randint(2, 41))
    opcodes = [_choice(rng, OPCODES) for _ in range(count)]
    strings = [_choice(rng, STRINGS) for _ in range(rng.randint(5))]
    return FunctionRecord(("com", token(), token()), token(),
                          param_types=params,
                          return_type=_choice(rng, VALUE_TYPES + ("void",)),
                          access_flags=flags,
                          num_registers=int(rng.randint(1, 17)),
                          code=Code(length, code),
                          instructions=Instructions(
                              count, opcodes, bool(rng.randint(2))),
                          strings=strings)


def _external_record(rng):
    class_name, method, params, ret = _choice(rng, EXTERNAL_APIS)
    return FunctionRecord(class_name, method, params, ret, external=True)


def _edges(rng, structure, n, knob):
    edges = []
    if structure == "chain":
        edges.extend((i, i + 1) for i in range(n - 1))
        for _ in range(knob * n // 4):
            a = int(rng.randint(n))
            edges.append((a, min(n - 1, a + 2)))
    elif structure == "star":
        hubs = min(n, 1 + knob)
        edges.extend((h, h + 1) for h in range(hubs - 1))
        edges.extend((v % hubs, v) for v in range(hubs, n))
    else:
        edges.extend((int(rng.randint(v)), v) for v in range(1, n))
        for _ in range(knob * n // 4):
            edges.append((int(rng.randint(n)), int(rng.randint(n))))
    return edges


def generate_sample(config, f, t, k):
    """Generate one sample.

    Returns
    -------
    (sample_id, records, edges, embeddings)
    """
    sample_id = sample_name(f, t, k)
    rng = sample_rng(config.seed, sample_id)
    n = int(rng.randint(config.min_nodes, config.max_nodes + 1))
    signature = signature_tokens(f, config.signature_size)

    records = []
    embeddings = {}
    for node in range(n):
        if node and rng.random_sample() < config.external_fraction:
            records.append(_external_record(rng))
            continue
        records.append(_internal_record(rng, config, signature))
        vector = config.embedding_noise * rng.standard_normal(config.llm_dim)
        vector[f % config.llm_dim] += config.strength
        embeddings[node] = vector

    edges = _edges(rng, config.structure(t), n, structure_knob(f, t))
    edges = sorted(set(edges))
    return (sample_id, records, edges,
            EmbeddingTable(config.llm_dim, embeddings))


def _write_sample(args):
    config_json, root, f, t, k = args
    config = SyntheticConfig.from_json(config_json)
    sample_id, records, edges, embeddings = generate_sample(config, f, t, k)
    path = os.path.join(root, family_name(f), type_name(t), sample_id)
    if not os.path.isdir(path):
        os.makedirs(path)
    write_records(records, os.path.join(path, RECORDS_FILE))
    write_edges(edges, os.path.join(path, EDGES_FILE))
    write_embeddings(embeddings, os.path.join(path, EMBEDDINGS_FILE))
    return sample_id


def generate_synthetic_corpus(config, root, workers=1, progress=False):
    """Write a synthetic corpus under ``root``.

    Returns
    -------
    :py:class:`~fcg_robust.corpus.CorpusIndex`
    """
    jobs = [(config.to_json(), root, f, t, k)
            for f in range(config.families)
            for t in range(config.types)
            for k in range(config.samples_per_type)]
    logger.info("Generating {} synthetic samples using {} worker(s)..."
                .format(len(jobs), workers))
    before = time.time()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(tqdm(pool.map(_write_sample, jobs), total=len(jobs),
                      desc="synth", disable=not progress))
    else:
        for job in tqdm(jobs, desc="synth", disable=not progress):
            _write_sample(job)
    after = time.time()
    logger.info("Generated corpus in {:.2f}s".format(after - before))
    return scan_corpus(root)
