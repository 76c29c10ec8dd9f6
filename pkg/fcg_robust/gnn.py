"""GCN and GIN graph classifiers over attributed call graphs.

A model is a stack of message passing layers, each followed by an optional
batch normalisation and a ReLU, a per-graph readout (elementwise max by
default) and a linear classifier head. The readout vectors are the graph
embeddings used by the adaptation methods.

Graphs are batched as a disjoint union: node rows of all graphs are stacked
and a sorted segment id vector records which graph each row belongs to.
"""

import io

import json

import logging

import os

from collections import OrderedDict, namedtuple

import numpy as np

from fcg_robust.autodiff import ParamSet, Tape, Tensor

from fcg_robust.errors import CollationError, ConfigError, EmptySplitError, \
    FcgError, FormatError, ShapeError, WidthMismatchError

from fcg_robust.ldp import undirected_neighbours


logger = logging.getLogger(__name__)

BACKBONES = ("gcn", "gin")
NORMS = ("batch", "none")
READOUTS = ("max", "mean")
MODES = ("train", "eval", "adapt")

BN_MOMENTUM = 0.1
BN_EPS = 1e-5

MANIFEST_FILE = "manifest.json"
PARAMS_FILE = "params.bin"
CHECKPOINT_FORMAT = "fcg-robust-checkpoint"
CHECKPOINT_VERSION = 1

TensorRecord = namedtuple("TensorRecord", "name kind shape offset")


class ModelConfig(object):
    """Hyperparameters of a graph classifier.

    Parameters
    ----------
    backbone : "gcn" or "gin"
    layers : int
        Number of message passing layers.
    hidden : int
        Width of every hidden representation (and of the graph embedding).
    input_dim : int
        Node feature width ``d``.
    classes : int
    gin_epsilon : float
        GIN's fixed self-weight ``eps``.
    norm : "batch" or "none"
    dropout : float
        Dropout rate applied after each layer in training mode.
    readout : "max" or "mean"
    directed : bool
        Propagate along call edges only instead of the symmetrised graph.
    """

    FIELDS = ("backbone", "layers", "hidden", "input_dim", "classes",
              "gin_epsilon", "norm", "dropout", "readout", "directed")

    def __init__(self, backbone="gin", layers=3, hidden=64, input_dim=5,
                 classes=2, gin_epsilon=0.0, norm="batch", dropout=0.0,
                 readout="max", directed=False):
        self.backbone = backbone
        self.layers = layers
        self.hidden = hidden
        self.input_dim = input_dim
        self.classes = classes
        self.gin_epsilon = float(gin_epsilon)
        self.norm = norm
        self.dropout = float(dropout)
        self.readout = readout
        self.directed = bool(directed)

        violations = self.violations()
        if violations:
            raise ConfigError(violations)

    def violations(self):
        """Every invariant this configuration breaks (empty when valid)."""
        out = []
        if self.backbone not in BACKBONES:
            out.append("model.backbone must be one of {}".format(BACKBONES))
        for name, minimum in (("layers", 1), ("hidden", 1),
                              ("input_dim", 1), ("classes", 2)):
            value = getattr(self, name)
            if not isinstance(value, int) or value < minimum:
                out.append("model.{} must be an integer >= {}, got {!r}"
                           .format(name, minimum, value))
        if self.norm not in NORMS:
            out.append("model.norm must be one of {}".format(NORMS))
        if not 0.0 <= self.dropout < 1.0:
            out.append("model.dropout must be in [0, 1)")
        if self.readout not in READOUTS:
            out.append("model.readout must be one of {}".format(READOUTS))
        return out

    def to_json(self):
        return OrderedDict((f, getattr(self, f)) for f in self.FIELDS)

    @classmethod
    def from_json(cls, d):
        unknown = set(d).difference(cls.FIELDS)
        if unknown:
            raise ConfigError(["unknown model key {!r}".format(k)
                               for k in sorted(unknown)])
        return cls(**d)

    def replace(self, **kwargs):
        d = self.to_json()
        d.update(kwargs)
        return ModelConfig(**d)

    def __eq__(self, other):
        return (isinstance(other, ModelConfig) and
                self.to_json() == other.to_json())

    def __ne__(self, other):
        return not self == other

    def __repr__(self):
        return "ModelConfig({})".format(", ".join(
            "{}={!r}".format(k, v) for k, v in self.to_json().items()))


def parameter_shapes(config):
    """The ordered ``{name: shape}`` of a model's trainable tensors."""
    shapes = OrderedDict()
    width = config.input_dim
    for layer in range(config.layers):
        prefix = "layers.{}.".format(layer)
        if config.backbone == "gcn":
            shapes[prefix + "weight"] = (width, config.hidden)
            shapes[prefix + "bias"] = (config.hidden,)
        else:
            shapes[prefix + "mlp0.weight"] = (width, config.hidden)
            shapes[prefix + "mlp0.bias"] = (config.hidden,)
            shapes[prefix + "mlp1.weight"] = (config.hidden, config.hidden)
            shapes[prefix + "mlp1.bias"] = (config.hidden,)
        if config.norm == "batch":
            shapes[prefix + "norm.gamma"] = (config.hidden,)
            shapes[prefix + "norm.beta"] = (config.hidden,)
        width = config.hidden
    shapes["classifier.weight"] = (config.hidden, config.classes)
    shapes["classifier.bias"] = (config.classes,)
    return shapes


def buffer_shapes(config):
    """The ordered ``{name: shape}`` of batch-norm running statistics."""
    shapes = OrderedDict()
    if config.norm == "batch":
        for layer in range(config.layers):
            prefix = "layers.{}.norm.".format(layer)
            shapes[prefix + "running_mean"] = (config.hidden,)
            shapes[prefix + "running_var"] = (config.hidden,)
    return shapes


def norm_parameter_names(config):
    """Names of the normalisation scale and shift tensors Tent adapts."""
    return [name for name in parameter_shapes(config)
            if name.endswith(".norm.gamma") or name.endswith(".norm.beta")]


class ModelState(object):
    """A model: configuration, parameters and normalisation statistics.

    Attributes
    ----------
    config : :py:class:`.ModelConfig`
    params : :py:class:`~fcg_robust.autodiff.ParamSet`
    buffers : {name: ndarray}
        Batch-norm running means and variances.
    class_names : [str, ...]
        The class id each logit column stands for.
    """

    def __init__(self, config, params, buffers=None, class_names=None):
        self.config = config
        self.params = params
        self.buffers = OrderedDict() if buffers is None else buffers
        if class_names is None:
            class_names = [str(c) for c in range(config.classes)]
        if len(class_names) != config.classes:
            raise ShapeError("{} class names for {} classes".format(
                len(class_names), config.classes))
        self.class_names = list(class_names)

        expected = parameter_shapes(config)
        if list(params) != list(expected):
            raise ShapeError("parameters {} do not match the configuration"
                             .format(list(params)))
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise ShapeError("parameter {} has shape {}, expected {}"
                                 .format(name, params[name].shape, shape))

    def copy(self):
        return ModelState(self.config, self.params.copy(),
                          OrderedDict((k, v.copy())
                                      for k, v in self.buffers.items()),
                          self.class_names)

    def tensors(self):
        """All parameters then all buffers, as ordered ``{name: ndarray}``."""
        out = self.params.values()
        for name, value in self.buffers.items():
            out[name] = value.copy()
        return out


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_model(config, seed, class_names=None):
    """A freshly initialised model.

    Weights are drawn uniformly from ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]``
    with a generator seeded by ``seed``; biases and norm shifts are zero and
    norm scales one.
    """
    rng = np.random.RandomState(seed)
    params = ParamSet()
    for name, shape in parameter_shapes(config).items():
        if name.endswith("weight"):
            value = _uniform(rng, shape, shape[0])
        elif name.endswith("gamma"):
            value = np.ones(shape)
        else:
            value = np.zeros(shape)
        params.add(name, value)
    buffers = OrderedDict()
    for name, shape in buffer_shapes(config).items():
        if name.endswith("running_mean"):
            buffers[name] = np.zeros(shape)
        else:
            buffers[name] = np.ones(shape)
    return ModelState(config, params, buffers, class_names)


def reinit_classifier(state, classes, seed, class_names=None):
    """A copy of ``state`` with a fresh classifier head for ``classes``."""
    config = state.config.replace(classes=classes)
    rng = np.random.RandomState(seed)
    params = ParamSet()
    for name, p in state.params.items():
        if name == "classifier.weight":
            params.add(name, _uniform(rng, (config.hidden, classes),
                                      config.hidden))
        elif name == "classifier.bias":
            params.add(name, np.zeros(classes))
        else:
            params.add(name, p.value.copy())
    buffers = OrderedDict((k, v.copy()) for k, v in state.buffers.items())
    return ModelState(config, params, buffers, class_names)


class GraphBatch(object):
    """A disjoint union of graphs ready for propagation.

    Parameters
    ----------
    graphs : [:py:class:`~fcg_robust.graph.AttributedGraph`, ...]
        Collated graphs (no undefined feature entries).
    input_dim : int
        Expected feature width.
    directed : bool
    labels : [int, ...] or None
        Class indices, one per graph.
    """

    def __init__(self, graphs, input_dim, directed=False, labels=None):
        if not graphs:
            raise EmptySplitError("cannot batch zero graphs")
        self.sample_ids = [g.sample_id for g in graphs]
        self.num_graphs = len(graphs)
        self.labels = None if labels is None else np.asarray(labels,
                                                             dtype=np.int64)

        offset = 0
        features, segments = [], []
        nbr_rows, nbr_cols, self_rows = [], [], []
        for num, g in enumerate(graphs):
            if g.n == 0:
                raise ShapeError("sample {} has no nodes".format(g.sample_id))
            if g.dim != input_dim:
                raise WidthMismatchError(input_dim, g.dim, g.sample_id)
            if not g.is_complete:
                raise CollationError(g.sample_id,
                                     "undefined feature entries; collate "
                                     "the sample first")
            features.append(g.features)
            segments.append(np.full(g.n, num, dtype=np.int64))
            rows, cols = _neighbour_pairs(g.n, g.edges, directed)
            nbr_rows.append(rows + offset)
            nbr_cols.append(cols + offset)
            self_rows.append(np.arange(g.n) + offset)
            offset += g.n

        self.num_nodes = offset
        self.features = np.vstack(features).astype(np.float64)
        self.segment_ids = np.concatenate(segments)
        self.nbr_rows = np.concatenate(nbr_rows)
        self.nbr_cols = np.concatenate(nbr_cols)

        # GCN: A_hat = A + I, scaled by its row sums on the receiving side
        # and its column sums on the sending side (equal when symmetric).
        self_rows = np.concatenate(self_rows)
        self.gcn_rows = np.concatenate([self.nbr_rows, self_rows])
        self.gcn_cols = np.concatenate([self.nbr_cols, self_rows])
        row_degree = np.bincount(self.gcn_rows, minlength=offset)
        col_degree = np.bincount(self.gcn_cols, minlength=offset)
        self.gcn_weights = 1.0 / np.sqrt(row_degree[self.gcn_rows] *
                                         col_degree[self.gcn_cols])


def _neighbour_pairs(n, edges, directed):
    """(row, col) pairs with ``row`` receiving messages from ``col``.

    These are the nonzero entries of A (directed) or of its symmetrisation,
    self-loops included once. Layers add the identity on top.
    """
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if directed:
        return edges[:, 0].copy(), edges[:, 1].copy()
    indptr, indices = undirected_neighbours(n, edges)
    rows = np.repeat(np.arange(n), np.diff(indptr))
    loops = np.unique(edges[edges[:, 0] == edges[:, 1], 0])
    return np.concatenate([rows, loops]), np.concatenate([indices, loops])


def model_forward(state, batch, mode="eval", tape=None, rng=None):
    """Run a model over a batch of graphs.

    Parameters
    ----------
    state : :py:class:`.ModelState`
    batch : :py:class:`.GraphBatch` or list of graphs
    mode : "train", "eval" or "adapt"
        ``train`` normalises with batch statistics and updates the running
        ones (and applies dropout); ``eval`` uses the running statistics and
        records nothing on the tape; ``adapt`` uses batch statistics without
        touching the running ones.
    tape : :py:class:`~fcg_robust.autodiff.Tape` or None
    rng : :py:class:`numpy.random.RandomState` or None
        Dropout generator (training mode only).

    Returns
    -------
    (embeddings, logits)
        :py:class:`~fcg_robust.autodiff.Tensor`\\ s of shapes (s, hidden)
        and (s, classes).
    """
    if mode not in MODES:
        raise ValueError("unknown mode {!r}".format(mode))
    config = state.config
    if not isinstance(batch, GraphBatch):
        batch = GraphBatch(batch, config.input_dim, config.directed)
    tape = Tape() if tape is None else tape
    if mode == "eval":
        def param(name):
            return state.params[name].detach()
    else:
        def param(name):
            return state.params[name]

    n = batch.num_nodes
    h = Tensor(batch.features)
    for layer in range(config.layers):
        prefix = "layers.{}.".format(layer)
        if config.backbone == "gcn":
            z = tape.matmul(h, param(prefix + "weight"))
            z = tape.propagate(z, batch.gcn_rows, batch.gcn_cols,
                               batch.gcn_weights, n)
            z = tape.add(z, param(prefix + "bias"))
        else:
            agg = tape.propagate(h, batch.nbr_rows, batch.nbr_cols,
                                 np.ones(len(batch.nbr_rows)), n)
            z = tape.add(tape.scale(h, 1.0 + config.gin_epsilon), agg)
            z = tape.add(tape.matmul(z, param(prefix + "mlp0.weight")),
                         param(prefix + "mlp0.bias"))
            z = tape.relu(z)
            z = tape.add(tape.matmul(z, param(prefix + "mlp1.weight")),
                         param(prefix + "mlp1.bias"))

        if config.norm == "batch":
            gamma = param(prefix + "norm.gamma")
            beta = param(prefix + "norm.beta")
            running_mean = state.buffers[prefix + "norm.running_mean"]
            running_var = state.buffers[prefix + "norm.running_var"]
            if mode == "eval":
                z, _, _ = tape.batch_norm(z, gamma, beta, running_mean,
                                          running_var, BN_EPS)
            else:
                z, mean, var = tape.batch_norm(z, gamma, beta, eps=BN_EPS)
                if mode == "train":
                    state.buffers[prefix + "norm.running_mean"] = (
                        (1.0 - BN_MOMENTUM) * running_mean +
                        BN_MOMENTUM * mean)
                    state.buffers[prefix + "norm.running_var"] = (
                        (1.0 - BN_MOMENTUM) * running_var + BN_MOMENTUM * var)
        h = tape.relu(z)
        if mode == "train" and config.dropout > 0.0:
            h = tape.dropout(h, config.dropout,
                             rng or np.random.RandomState(0))

    if config.readout == "max":
        emb = tape.segment_max(h, batch.segment_ids, batch.num_graphs)
    else:
        emb = tape.segment_mean(h, batch.segment_ids, batch.num_graphs)
    logits = tape.add(tape.matmul(emb, param("classifier.weight")),
                      param("classifier.bias"))
    return emb, logits


def predict(state, graphs, batch_size=64):
    """Eval-mode embeddings and logits of ``graphs`` as arrays."""
    embeddings, logits = [], []
    for start in range(0, len(graphs), batch_size):
        emb, out = model_forward(state, graphs[start:start + batch_size])
        embeddings.append(emb.value)
        logits.append(out.value)
    if not embeddings:
        raise EmptySplitError("no graphs to predict")
    return np.vstack(embeddings), np.vstack(logits)


def save_checkpoint(state, directory):
    """Write ``manifest.json`` and ``params.bin`` into ``directory``.

    ``params.bin`` concatenates every tensor (parameters, then buffers) as
    little-endian 64-bit floats; the manifest records name, kind, shape and
    byte offset of each.
    """
    if not os.path.isdir(directory):
        os.makedirs(directory)
    records = []
    chunks = []
    offset = 0
    for kind, items in (("param", state.params.values().items()),
                        ("buffer", state.buffers.items())):
        for name, value in items:
            data = np.ascontiguousarray(value, dtype="<f8").tobytes()
            records.append(OrderedDict([("name", name), ("kind", kind),
                                        ("shape", list(value.shape)),
                                        ("offset", offset)]))
            chunks.append(data)
            offset += len(data)
    manifest = OrderedDict([
        ("format", CHECKPOINT_FORMAT),
        ("version", CHECKPOINT_VERSION),
        ("config", state.config.to_json()),
        ("class_names", state.class_names),
        ("tensors", records),
        ("size", offset),
    ])
    with io.open(os.path.join(directory, MANIFEST_FILE), "w",
                 encoding="utf-8") as f:
        f.write(json.dumps(manifest, indent=1))
        f.write(u"\n")
    with open(os.path.join(directory, PARAMS_FILE), "wb") as f:
        f.write(b"".join(chunks))
    logger.info("Saved checkpoint with {} tensors to {}".format(
        len(records), directory))


def load_checkpoint(directory):
    """Read a checkpoint written by :py:func:`.save_checkpoint`.

    Raises
    ------
    :py:class:`~fcg_robust.errors.FormatError`
        On a missing file, an unknown format, a tensor whose shape or offset
        disagrees with the configuration, or a truncated ``params.bin``.
    """
    manifest_path = os.path.join(directory, MANIFEST_FILE)
    params_path = os.path.join(directory, PARAMS_FILE)
    try:
        with io.open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
        with open(params_path, "rb") as f:
            data = f.read()
    except (IOError, OSError) as e:
        raise FormatError("cannot read checkpoint {}: {}".format(directory, e))
    except ValueError as e:
        raise FormatError("{} is not valid JSON: {}".format(manifest_path, e))
    if not isinstance(manifest, dict) or \
            manifest.get("format") != CHECKPOINT_FORMAT or \
            manifest.get("version") != CHECKPOINT_VERSION:
        raise FormatError("{} is not a version {} checkpoint".format(
            manifest_path, CHECKPOINT_VERSION))

    try:
        config = ModelConfig.from_json(manifest["config"])
        class_names = manifest.get("class_names")
        records = [TensorRecord(r["name"], r["kind"], tuple(r["shape"]),
                                int(r["offset"]))
                   for r in manifest["tensors"]]
    except FcgError:
        raise
    except (KeyError, TypeError, AttributeError, ValueError) as e:
        raise FormatError("{} is malformed ({!r})".format(manifest_path, e))
    expected = [(n, "param", s) for n, s in parameter_shapes(config).items()]
    expected += [(n, "buffer", s) for n, s in buffer_shapes(config).items()]
    if [r.name for r in records] != [n for n, _, _ in expected]:
        raise FormatError("checkpoint tensors {} do not match the "
                          "configuration".format([r.name for r in records]))

    params = ParamSet()
    buffers = OrderedDict()
    offset = 0
    for record, (name, kind, shape) in zip(records, expected):
        if record.shape != shape or record.kind != kind:
            raise FormatError("tensor {} has shape {}, expected {}".format(
                name, record.shape, shape))
        if record.offset != offset:
            raise FormatError("tensor {} at offset {}, expected {}".format(
                name, record.offset, offset))
        size = 8 * int(np.prod(shape))
        if offset + size > len(data):
            raise FormatError("{} is truncated in tensor {}".format(
                params_path, name))
        value = np.frombuffer(data[offset:offset + size], dtype="<f8")
        value = value.astype(np.float64).reshape(shape)
        if kind == "param":
            params.add(name, value)
        else:
            buffers[name] = value
        offset += size
    if offset != len(data):
        raise FormatError("{} has {} trailing bytes".format(
            params_path, len(data) - offset))
    return ModelState(config, params, buffers, class_names)
