"""Upstream training, evaluation and accuracy reporting.

Training minimises the mean softmax cross-entropy over shuffled mini-batches
and keeps the parameters of the epoch with the best validation accuracy.
Everything is seeded: two runs with the same configuration produce the same
history and the same checkpoint.
"""

import logging

import time

from collections import OrderedDict

import numpy as np

from six import iteritems

from fcg_robust.autodiff import Tape, adam_step, sgd_step

from fcg_robust.errors import ConfigError, EmptySplitError, FcgError, \
    WidthMismatchError

from fcg_robust.gnn import GraphBatch, init_model, model_forward, predict


logger = logging.getLogger(__name__)

OPTIMIZERS = ("adam", "sgd")
CLASS_KEYS = ("family", "type", "label")
DEFAULT_RATIOS = (0.7, 0.1, 0.2)


class TrainConfig(object):
    """Training loop settings.

    Parameters
    ----------
    epochs, batch_size : int
    lr : float
    optimizer : "adam" or "sgd"
    seed : int
        Seeds parameter initialisation, shuffling and dropout.
    collation : "trim", "zero" or "prune"
        Collation the training data went through (recorded for reports).
    features : str
        Feature families the training data was extracted with.
    early_stop_patience : int
        Stop after this many epochs without validation improvement (0
        disables early stopping).
    class_key : "family", "type" or "label"
        Which part of a sample's label is its class, when no split file
        assigns classes explicitly.
    """

    FIELDS = ("epochs", "batch_size", "lr", "optimizer", "seed", "collation",
              "features", "early_stop_patience", "class_key")

    def __init__(self, epochs=100, batch_size=32, lr=0.01, optimizer="adam",
                 seed=0, collation="zero", features="meta,ldp",
                 early_stop_patience=0, class_key="family"):
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = float(lr)
        self.optimizer = optimizer
        self.seed = seed
        self.collation = collation
        self.features = features
        self.early_stop_patience = early_stop_patience
        self.class_key = class_key

        violations = self.violations()
        if violations:
            raise ConfigError(violations)

    def violations(self):
        out = []
        for name, minimum in (("epochs", 1), ("batch_size", 1), ("seed", 0),
                              ("early_stop_patience", 0)):
            value = getattr(self, name)
            if not isinstance(value, int) or value < minimum:
                out.append("train.{} must be an integer >= {}, got {!r}"
                           .format(name, minimum, value))
        if not self.lr > 0.0:
            out.append("train.lr must be positive")
        if self.optimizer not in OPTIMIZERS:
            out.append("train.optimizer must be one of {}".format(OPTIMIZERS))
        if self.collation not in ("trim", "zero", "prune"):
            out.append("train.collation must be trim, zero or prune")
        if self.class_key not in CLASS_KEYS:
            out.append("train.class_key must be one of {}".format(CLASS_KEYS))
        return out

    def to_json(self):
        return OrderedDict((f, getattr(self, f)) for f in self.FIELDS)

    @classmethod
    def from_json(cls, d):
        unknown = set(d).difference(cls.FIELDS)
        if unknown:
            raise ConfigError(["unknown train key {!r}".format(k)
                               for k in sorted(unknown)])
        return cls(**d)


class Split(object):
    """Graphs with their class indices."""

    def __init__(self, graphs, labels):
        self.graphs = list(graphs)
        self.labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        if len(self.graphs) != len(self.labels):
            raise FcgError("{} graphs with {} labels".format(
                len(self.graphs), len(self.labels)))

    def __len__(self):
        return len(self.graphs)

    @classmethod
    def build(cls, graphs, classes, class_names):
        """Map per-graph class names onto indices of ``class_names``."""
        index = {name: num for num, name in enumerate(class_names)}
        labels = []
        for g, name in zip(graphs, classes):
            if name not in index:
                raise FcgError("sample {} has class {!r}, not one of {}"
                               .format(g.sample_id, name, list(class_names)))
            labels.append(index[name])
        return cls(list(graphs), np.array(labels, dtype=np.int64))

    def subset(self, indices):
        return Split([self.graphs[i] for i in indices],
                     self.labels[np.asarray(indices, dtype=np.int64)])


def class_of(g, class_key="family"):
    """The class name of a graph according to ``class_key``."""
    if class_key == "family":
        return g.label.family
    elif class_key == "type":
        return g.label.type
    else:
        return str(g.label)


def stratified_split(sample_ids, classes, ratios=DEFAULT_RATIOS, seed=0):
    """Split sample ids into train/validation/test sets, per class.

    Within each class the ids are sorted, shuffled with a generator seeded
    by ``seed`` and cut according to ``ratios`` (rounded, train first).

    Returns
    -------
    (train_ids, val_ids, test_ids)
        Each sorted.
    """
    if len(ratios) != 3 or any(r < 0 for r in ratios) or sum(ratios) <= 0:
        raise FcgError("split ratios must be three non-negative numbers")
    total = float(sum(ratios))
    by_class = OrderedDict()
    for sample_id, name in sorted(zip(sample_ids, classes)):
        by_class.setdefault(name, []).append(sample_id)

    rng = np.random.RandomState(seed)
    train, val, test = [], [], []
    for name in sorted(by_class):
        ids = by_class[name]
        order = [ids[i] for i in rng.permutation(len(ids))]
        n_train = max(1, int(round(len(ids) * ratios[0] / total)))
        n_val = int(round(len(ids) * ratios[1] / total))
        n_val = min(n_val, len(ids) - n_train)
        train.extend(order[:n_train])
        val.extend(order[n_train:n_train + n_val])
        test.extend(order[n_train + n_val:])
    return sorted(train), sorted(val), sorted(test)


def check_width(graphs, input_dim):
    for g in graphs:
        if g.dim != input_dim:
            raise WidthMismatchError(input_dim, g.dim, g.sample_id)


def predict_labels(state, graphs, batch_size=64):
    """Eval-mode argmax class indices of ``graphs``."""
    return np.argmax(predict(state, graphs, batch_size)[1], axis=1)


def _accuracy(state, split):
    return float(np.mean(predict_labels(state, split.graphs) == split.labels))


def fit(state, train, val, epochs, batch_size, lr, optimizer="adam", seed=0,
        trainable=None, patience=0):
    """The shared training loop of upstream training and finetuning.

    Parameters
    ----------
    state : :py:class:`~fcg_robust.gnn.ModelState`
        Trained in place; the returned state is a copy of the best epoch's.
    train, val : :py:class:`.Split`
        ``val`` may be empty, in which case selection uses train accuracy.
    trainable : [str, ...] or None
        Names of the parameters to update (default: all).
    patience : int
        Early stopping patience in epochs (0 disables).

    Returns
    -------
    (best_state, history)
        ``history`` holds one ``{epoch, train_loss, val_accuracy}`` per
        epoch run. Ties in accuracy keep the earlier epoch.
    """
    config = state.config
    rng = np.random.RandomState(seed)
    step = adam_step if optimizer == "adam" else sgd_step
    state.params.reset_state()
    selection = val if len(val) else train

    best_state, best_accuracy, best_epoch = state.copy(), -1.0, -1
    history = []
    for epoch in range(epochs):
        order = rng.permutation(len(train))
        loss_sum = 0.0
        for start in range(0, len(train), batch_size):
            chunk = order[start:start + batch_size]
            batch = GraphBatch([train.graphs[i] for i in chunk],
                               config.input_dim, config.directed,
                               train.labels[chunk])
            tape = Tape()
            _, logits = model_forward(state, batch, "train", tape, rng)
            loss = tape.softmax_cross_entropy(logits, batch.labels)
            grads = tape.backward(loss, state.params)
            if trainable is not None:
                grads = OrderedDict((n, g) for n, g in iteritems(grads)
                                    if n in trainable)
            step(state.params, grads, lr)
            loss_sum += float(loss.value) * len(chunk)

        accuracy = _accuracy(state, selection)
        history.append(OrderedDict([("epoch", epoch),
                                    ("train_loss", loss_sum / len(train)),
                                    ("val_accuracy", accuracy)]))
        logger.debug("Epoch {}: loss {:.4f}, accuracy {:.4f}".format(
            epoch, loss_sum / len(train), accuracy))
        if accuracy > best_accuracy:
            best_state, best_accuracy, best_epoch = (state.copy(), accuracy,
                                                     epoch)
        elif patience and epoch - best_epoch >= patience:
            logger.info("Stopping early after epoch {}".format(epoch))
            break
    if best_epoch >= 0:
        logger.info("Selected epoch {} with accuracy {:.4f}".format(
            best_epoch, best_accuracy))
    return best_state, history


def train_upstream(train, val, model_config, train_config, class_names=None):
    """Train a fresh model on the source distribution.

    Parameters
    ----------
    train, val : :py:class:`.Split`
    model_config : :py:class:`~fcg_robust.gnn.ModelConfig`
    train_config : :py:class:`.TrainConfig`
    class_names : [str, ...] or None

    Returns
    -------
    (state, history)

    Raises
    ------
    :py:class:`~fcg_robust.errors.EmptySplitError`
        If the training split is empty.
    :py:class:`~fcg_robust.errors.WidthMismatchError`
        If a sample's feature width differs from ``model_config.input_dim``.
    """
    if not len(train):
        raise EmptySplitError("the training split is empty")
    check_width(train.graphs, model_config.input_dim)
    check_width(val.graphs, model_config.input_dim)

    logger.info("Training {} on {} samples ({} validation)...".format(
        model_config.backbone, len(train), len(val)))
    before = time.time()
    state = init_model(model_config, train_config.seed, class_names)
    state, history = fit(state, train, val, train_config.epochs,
                         train_config.batch_size, train_config.lr,
                         train_config.optimizer, train_config.seed,
                         patience=train_config.early_stop_patience)
    after = time.time()
    logger.info("Trained model in {:.2f}s".format(after - before))
    return state, history


class EvalReport(object):
    """Classification metrics of a set of predictions.

    Attributes
    ----------
    accuracy : float
    per_class : {class_name: accuracy or None}
        ``None`` for classes without support.
    macro_f1 : float
        Mean F1 over classes which occur as a label or a prediction.
    confusion : ndarray (c, c)
        ``confusion[true, predicted]`` counts.
    n : int
    class_names : [str, ...]
    predictions : [{sample_id, label, predicted}, ...]
    """

    def __init__(self, labels, predicted, class_names, sample_ids=None):
        labels = np.asarray(labels, dtype=np.int64)
        predicted = np.asarray(predicted, dtype=np.int64)
        if labels.shape != predicted.shape:
            raise FcgError("{} labels for {} predictions".format(
                len(labels), len(predicted)))
        if not len(labels):
            raise EmptySplitError("cannot evaluate zero samples")
        c = len(class_names)
        self.class_names = list(class_names)
        self.n = len(labels)
        self.confusion = np.zeros((c, c), dtype=np.int64)
        np.add.at(self.confusion, (labels, predicted), 1)
        self.accuracy = float(np.trace(self.confusion)) / self.n

        support = self.confusion.sum(axis=1)
        predicted_count = self.confusion.sum(axis=0)
        tp = np.diag(self.confusion)
        self.per_class = OrderedDict()
        f1 = []
        for k, name in enumerate(self.class_names):
            self.per_class[name] = (float(tp[k]) / support[k]
                                    if support[k] else None)
            denominator = support[k] + predicted_count[k]
            if denominator:
                f1.append(2.0 * tp[k] / denominator)
        self.macro_f1 = float(np.mean(f1))

        if sample_ids is None:
            sample_ids = [str(i) for i in range(self.n)]
        self.predictions = [
            OrderedDict([("sample_id", s),
                         ("label", self.class_names[y]),
                         ("predicted", self.class_names[p])])
            for s, y, p in zip(sample_ids, labels, predicted)]

    def to_json(self):
        return OrderedDict([
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
            ("n", self.n),
            ("class_names", self.class_names),
            ("per_class", self.per_class),
            ("confusion", self.confusion.tolist()),
            ("predictions", self.predictions),
        ])

    @classmethod
    def from_json(cls, d):
        index = {name: k for k, name in enumerate(d["class_names"])}
        return cls([index[p["label"]] for p in d["predictions"]],
                   [index[p["predicted"]] for p in d["predictions"]],
                   d["class_names"],
                   [p["sample_id"] for p in d["predictions"]])


def evaluate(state, split, batch_size=64):
    """Eval-mode accuracy report of a model on a labelled split."""
    if not len(split):
        raise EmptySplitError("cannot evaluate an empty split")
    check_width(split.graphs, state.config.input_dim)
    predicted = predict_labels(state, split.graphs, batch_size)
    report = EvalReport(split.labels, predicted, state.class_names,
                        [g.sample_id for g in split.graphs])
    logger.info("Accuracy {:.4f} on {} samples".format(report.accuracy,
                                                       report.n))
    return report


def accuracy_table(runs):
    """Aggregate accuracies over seeds into ``mean_{std}`` cells.

    Parameters
    ----------
    runs : [{"model": str, "dataset": str, "accuracy": float}, ...]

    Returns
    -------
    OrderedDict
        ``{model: {dataset: {"mean", "std", "runs"}}}`` with accuracies in
        percent; std is the sample standard deviation (0 for one run).
        Models and datasets keep their first-seen order.
    """
    grouped = OrderedDict()
    for run in runs:
        grouped.setdefault(run["model"], OrderedDict()).setdefault(
            run["dataset"], []).append(100.0 * run["accuracy"])
    table = OrderedDict()
    for model, datasets in iteritems(grouped):
        table[model] = OrderedDict()
        for dataset, values in iteritems(datasets):
            values = np.array(values)
            table[model][dataset] = OrderedDict([
                ("mean", float(values.mean())),
                ("std", float(values.std(ddof=1)) if len(values) > 1
                 else 0.0),
                ("runs", len(values)),
            ])
    return table


def compare_to_baseline(table, baseline):
    """Annotate every cell of an accuracy table with its ratio to a
    baseline model's mean on the same dataset.

    Adds ``"ratio"`` (None when the baseline lacks that dataset or scored
    0) and ``"below"`` (True when the mean is under the baseline's) to a
    copy of every cell.
    """
    if baseline not in table:
        raise FcgError("baseline model {} is not in the table (models: "
                       "{})".format(baseline, ", ".join(table)))
    reference = table[baseline]
    out = OrderedDict()
    for model, row in iteritems(table):
        out[model] = OrderedDict()
        for dataset, cell in iteritems(row):
            cell = OrderedDict(cell)
            ref = reference.get(dataset)
            if ref is None or ref["mean"] <= 0.0:
                cell["ratio"] = None
                cell["below"] = False
            else:
                cell["ratio"] = cell["mean"] / ref["mean"]
                cell["below"] = cell["mean"] < ref["mean"]
            out[model][dataset] = cell
    return out


def format_cell(cell):
    """``mean_{std}``, followed by the baseline ratio when present and a
    ``*`` marking cells below the baseline."""
    text = "{:.1f}_{{{:.1f}}}".format(cell["mean"], cell["std"])
    if cell.get("ratio") is not None:
        text += " x{:.3f}".format(cell["ratio"])
    if cell.get("below"):
        text += "*"
    return text


def render_table(table):
    """Plain-text rendering of :py:func:`.accuracy_table` (or
    :py:func:`.compare_to_baseline`) output."""
    datasets = []
    for row in table.values():
        for dataset in row:
            if dataset not in datasets:
                datasets.append(dataset)
    header = ["model"] + datasets
    rows = [[model] + [format_cell(row[d]) if d in row else "-"
                       for d in datasets]
            for model, row in iteritems(table)]
    widths = [max(len(r[i]) for r in [header] + rows)
              for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
             for r in [header] + rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
