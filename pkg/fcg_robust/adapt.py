"""Adapting a trained model to a shifted target distribution.

Test-time adaptation uses unlabelled target graphs only:

* :py:class:`.T3A` replaces the classifier head by class prototypes built
  from confidently pseudo-labelled target embeddings;
* :py:func:`.tent_adapt` minimises prediction entropy by updating the batch
  normalisation scale and shift.

Domain adaptation uses labelled target graphs:

* :py:class:`.KnnProbe` classifies by majority vote of the nearest labelled
  target embeddings;
* :py:func:`.finetune` retrains the whole model, optionally with a fresh
  classifier head for a new label set.

None of the gradient-free methods modify the model they are given.
"""

import logging

import time

from collections import OrderedDict

import numpy as np

from six import iteritems

from fcg_robust.autodiff import Tape, adam_step

from fcg_robust.errors import ClassCountError, ConfigError, EmptySplitError, \
    UnsupportedMethodError

from fcg_robust.gnn import GraphBatch, model_forward, norm_parameter_names, \
    predict, reinit_classifier

from fcg_robust.train import check_width, fit


logger = logging.getLogger(__name__)

METHODS = ("t3a", "tent", "knn", "finetune")


class AdaptConfig(object):
    """Adaptation settings.

    Parameters
    ----------
    method : "t3a", "tent", "knn" or "finetune"
    support_size : int
        T3A's per-class support capacity (``M``).
    k : int
        Neighbours consulted by the k-NN probe.
    tent_lr : float
    tent_steps_per_batch : int
    finetune_epochs : int
    finetune_lr : float
    reinit_classifier : bool
        Give the finetuned model a fresh classifier head (required when the
        target classes differ from the source classes).
    batch_size : int
        Target stream batch size (Tent, finetuning).
    seed : int
    """

    FIELDS = ("method", "support_size", "k", "tent_lr",
              "tent_steps_per_batch", "finetune_epochs", "finetune_lr",
              "reinit_classifier", "batch_size", "seed")

    def __init__(self, method="t3a", support_size=100, k=5, tent_lr=1e-3,
                 tent_steps_per_batch=1, finetune_epochs=30, finetune_lr=1e-3,
                 reinit_classifier=False, batch_size=32, seed=0):
        self.method = method
        self.support_size = support_size
        self.k = k
        self.tent_lr = float(tent_lr)
        self.tent_steps_per_batch = tent_steps_per_batch
        self.finetune_epochs = finetune_epochs
        self.finetune_lr = float(finetune_lr)
        self.reinit_classifier = bool(reinit_classifier)
        self.batch_size = batch_size
        self.seed = seed

        violations = self.violations()
        if violations:
            raise ConfigError(violations)

    def violations(self):
        out = []
        if self.method not in METHODS:
            out.append("adapt.method must be one of {}".format(METHODS))
        for name, minimum in (("support_size", 1), ("k", 1),
                              ("tent_steps_per_batch", 1),
                              ("finetune_epochs", 0), ("batch_size", 1),
                              ("seed", 0)):
            value = getattr(self, name)
            if not isinstance(value, int) or value < minimum:
                out.append("adapt.{} must be an integer >= {}, got {!r}"
                           .format(name, minimum, value))
        for name in ("tent_lr", "finetune_lr"):
            if not getattr(self, name) > 0.0:
                out.append("adapt.{} must be positive".format(name))
        return out

    def to_json(self):
        return OrderedDict((f, getattr(self, f)) for f in self.FIELDS)

    @classmethod
    def from_json(cls, d):
        unknown = set(d).difference(cls.FIELDS)
        if unknown:
            raise ConfigError(["unknown adapt key {!r}".format(k)
                               for k in sorted(unknown)])
        return cls(**d)


def _softmax_entropy(scores):
    shifted = scores - scores.max()
    log_p = shifted - np.log(np.exp(shifted).sum())
    return float(-(np.exp(log_p) * log_p).sum())


def _unit_rows(x):
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    return np.where(norms > 0, x / np.where(norms > 0, norms, 1.0), 0.0)


class T3A(object):
    """Online prototype classifier over a frozen model's graph embeddings.

    Each class starts with one support entry, the class's classifier weight
    column, with entropy 0. For every arriving embedding ``z``:

    1. prototypes are the means of the class supports; scores are dot
       products of the L2-normalised ``z`` and prototypes;
    2. the prediction is the argmax score (made *before* ``z`` is added);
    3. ``z`` joins the support of the predicted class with the entropy of
       the softmax of its scores, and entries beyond ``support_size`` are
       evicted, highest entropy first.

    Parameters
    ----------
    state : :py:class:`~fcg_robust.gnn.ModelState`
        Never modified.
    support_size : int
    """

    def __init__(self, state, support_size=100):
        if support_size < 1:
            raise ConfigError(["adapt.support_size must be >= 1"])
        self.state = state
        self.support_size = support_size
        weight = state.params["classifier.weight"].value
        self.supports = [[(weight[:, c].copy(), 0.0)]
                         for c in range(state.config.classes)]

    def set_support(self, class_index, entries):
        """Replace a class's support with ``[(embedding, entropy), ...]``."""
        entries = sorted(((np.asarray(z, dtype=np.float64), float(e))
                          for z, e in entries), key=lambda entry: entry[1])
        self.supports[class_index] = entries[:self.support_size]

    def prototypes(self):
        """The (c, h) matrix of support means."""
        return np.array([np.mean([z for z, _ in support], axis=0)
                         for support in self.supports])

    def scores(self, z):
        z = np.asarray(z, dtype=np.float64)
        prototypes = self.prototypes()
        if not np.linalg.norm(z) > 0:
            logger.warning("Zero-norm embedding; using unnormalised scores")
            return prototypes.dot(z)
        return _unit_rows(prototypes).dot(_unit_rows(z))

    def observe(self, z):
        """Classify one embedding and add it to the support sets.

        Returns
        -------
        int
            The predicted class index.
        """
        scores = self.scores(z)
        predicted = int(np.argmax(scores))
        support = self.supports[predicted]
        support.append((np.array(z, dtype=np.float64),
                        _softmax_entropy(scores)))
        support.sort(key=lambda entry: entry[1])
        del support[self.support_size:]
        return predicted

    def support_sizes(self):
        return [len(s) for s in self.supports]

    def to_json(self):
        """The support sets, keyed by class name, for inspection."""
        return OrderedDict(
            (name, [OrderedDict([("entropy", e), ("embedding", z.tolist())])
                    for z, e in support])
            for name, support in zip(self.state.class_names, self.supports))


def t3a_adapt(state, graphs, support_size=100, batch_size=64):
    """Run T3A over a stream of unlabelled target graphs, in order.

    Returns
    -------
    (predictions, t3a)
        Predicted class indices, one per graph, and the adapted
        :py:class:`.T3A` predictor.
    """
    t3a = T3A(state, support_size)
    embeddings = predict(state, graphs, batch_size)[0]
    predictions = np.array([t3a.observe(z) for z in embeddings],
                           dtype=np.int64)
    logger.info("T3A support sizes after {} graphs: {}".format(
        len(graphs), t3a.support_sizes()))
    return predictions, t3a


def tent_adapt(state, graphs, lr=1e-3, steps_per_batch=1, batch_size=32):
    """Tent: online entropy minimisation over the norm scale and shift.

    The target stream is consumed in order in batches of ``batch_size``.
    On each batch the model normalises with the batch's own statistics,
    and ``steps_per_batch`` Adam steps on the mean prediction entropy
    update only the ``norm.gamma``/``norm.beta`` tensors. Adaptation
    carries over from batch to batch.

    Returns
    -------
    (adapted_state, predictions)
        Predictions are made by the forward pass preceding the last update
        of each batch.

    Raises
    ------
    :py:class:`~fcg_robust.errors.UnsupportedMethodError`
        If the model has no batch normalisation.
    """
    if state.config.norm != "batch":
        raise UnsupportedMethodError(
            "Tent needs batch normalisation layers; the model has norm "
            "{!r}".format(state.config.norm))
    check_width(graphs, state.config.input_dim)
    adapted = state.copy()
    adapted.params.reset_state()
    trainable = set(norm_parameter_names(state.config))

    predictions = []
    for start in range(0, len(graphs), batch_size):
        batch = GraphBatch(graphs[start:start + batch_size],
                           state.config.input_dim, state.config.directed)
        for _ in range(steps_per_batch):
            tape = Tape()
            _, logits = model_forward(adapted, batch, "adapt", tape)
            loss = tape.mean_entropy(logits)
            grads = tape.backward(loss, adapted.params)
            adam_step(adapted.params,
                      OrderedDict((n, g) for n, g in iteritems(grads)
                                  if n in trainable), lr)
        logger.debug("Tent batch at {}: entropy {:.6f}".format(
            start, float(loss.value)))
        predictions.extend(np.argmax(logits.value, axis=1))
    return adapted, np.array(predictions, dtype=np.int64)


def entropy_of(state, graphs):
    """Mean prediction entropy of ``graphs`` under batch statistics."""
    tape = Tape()
    _, logits = model_forward(state, graphs, "adapt", tape)
    return float(tape.mean_entropy(logits).value)


class KnnProbe(object):
    """k-nearest-neighbour classification of frozen graph embeddings.

    Distances are cosine distances. The prediction is the majority class of
    the ``k`` nearest labelled embeddings; between equally frequent classes
    the one owning the nearest of those neighbours wins. Among equidistant
    neighbours the earlier labelled sample is nearer.

    Parameters
    ----------
    state : :py:class:`~fcg_robust.gnn.ModelState`
        Never modified.
    split : :py:class:`~fcg_robust.train.Split`
        The labelled target set.
    k : int
    class_names : [str, ...]
        Names of the split's label indices.
    """

    def __init__(self, state, split, k=5, class_names=None):
        if not len(split):
            raise EmptySplitError("the k-NN probe needs labelled graphs")
        if k < 1:
            raise ConfigError(["adapt.k must be >= 1"])
        if k > len(split):
            logger.warning("k = {} exceeds the {} labelled graphs; using "
                           "k = {}".format(k, len(split), len(split)))
            k = len(split)
        check_width(split.graphs, state.config.input_dim)
        self.state = state
        self.k = k
        self.labels = split.labels
        self.class_names = class_names
        self.embeddings = predict(state, split.graphs)[0]

    @staticmethod
    def cosine_distances(queries, keys):
        return 1.0 - _unit_rows(queries).dot(_unit_rows(keys).T)

    def predict_embeddings(self, queries):
        """Class indices for a (q, h) matrix of embeddings."""
        distances = self.cosine_distances(np.atleast_2d(queries),
                                          self.embeddings)
        out = []
        for row in distances:
            nearest = self.labels[np.argsort(row, kind="mergesort")[:self.k]]
            counts = np.bincount(nearest)
            tied = np.flatnonzero(counts == counts.max())
            out.append(next(y for y in nearest if y in tied))
        return np.array(out, dtype=np.int64)

    def predict(self, graphs):
        return self.predict_embeddings(predict(self.state, graphs)[0])


def finetune(state, train, val, config, class_names=None):
    """Finetune every parameter on labelled target data.

    Parameters
    ----------
    state : :py:class:`~fcg_robust.gnn.ModelState`
        Never modified.
    train, val : :py:class:`~fcg_robust.train.Split`
    config : :py:class:`.AdaptConfig`
    class_names : [str, ...] or None
        The target classes (default: the model's).

    Returns
    -------
    (adapted_state, history)

    Raises
    ------
    :py:class:`~fcg_robust.errors.ClassCountError`
        If the target class count differs from the model's and
        ``config.reinit_classifier`` is not set.
    """
    if class_names is None:
        class_names = state.class_names
    if config.reinit_classifier:
        adapted = reinit_classifier(state, len(class_names),
                                    config.seed + 1, class_names)
    elif len(class_names) != state.config.classes:
        raise ClassCountError(
            "target has {} classes but the model has {}; reinitialise the "
            "classifier".format(len(class_names), state.config.classes))
    else:
        adapted = state.copy()
        adapted.class_names = list(class_names)
    check_width(train.graphs, state.config.input_dim)
    if config.finetune_epochs and not len(train):
        raise EmptySplitError("the finetuning split is empty")

    before = time.time()
    adapted, history = fit(adapted, train, val, config.finetune_epochs,
                           config.batch_size, config.finetune_lr, "adam",
                           config.seed)
    after = time.time()
    logger.info("Finetuned for {} epochs in {:.2f}s".format(
        len(history), after - before))
    return adapted, history
