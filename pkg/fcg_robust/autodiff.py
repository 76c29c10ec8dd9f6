"""A small reverse-mode automatic differentiation engine over dense numpy
arrays.

Operations are recorded on a :py:class:`.Tape` as they are evaluated; each
record carries a backward rule mapping the gradient of its output to the
gradients of its inputs. :py:meth:`.Tape.backward` replays the records in
reverse creation order::

    >>> params = ParamSet()
    >>> w = params.add("w", np.ones((3, 2)))
    >>> tape = Tape()
    >>> loss = tape.sum(tape.matmul(Tensor(np.eye(3)), w))
    >>> tape.backward(loss, params)["w"]
    array([[1., 1.],
           [1., 1.],
           [1., 1.]])

All values are 64-bit floats. Reductions happen in a fixed order so results
are bit-for-bit reproducible.
"""

import copy

from collections import OrderedDict, namedtuple

import numpy as np

from six import iteritems

from fcg_robust.errors import NumericalError, ShapeError


class Tensor(object):
    """A dense float64 array, optionally tracked for differentiation."""

    __slots__ = ("value", "requires_grad", "name")

    def __init__(self, value, requires_grad=False, name=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def detach(self):
        """An untracked tensor sharing this tensor's value."""
        return Tensor(self.value)

    def __repr__(self):
        return "Tensor({}{}, shape={})".format(
            "" if self.name is None else self.name + ", ",
            "tracked" if self.requires_grad else "constant", self.shape)


"""One recorded operation: backward(grad_output) -> grads of inputs."""
Record = namedtuple("Record", "op inputs output backward")


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    """Sum a gradient down to the shape of a broadcast operand."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_segments(segment_ids, num_segments, n):
    segment_ids = np.asarray(segment_ids, dtype=np.int64)
    if segment_ids.shape != (n,):
        raise ShapeError("segment ids of shape {} for {} rows".format(
            segment_ids.shape, n))
    if n and (np.any(np.diff(segment_ids) < 0) or segment_ids[0] < 0 or
              segment_ids[-1] >= num_segments):
        raise ShapeError("segment ids must be sorted within [0, {})".format(
            num_segments))
    counts = np.bincount(segment_ids, minlength=num_segments)
    if len(counts) != num_segments or np.any(counts == 0):
        raise ShapeError("empty segment")
    return segment_ids, counts


def _log_softmax(z):
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


class Tape(object):
    """Records differentiable operations in creation order."""

    def __init__(self):
        self.records = []

    def __len__(self):
        return len(self.records)

    def _apply(self, op, inputs, value, backward):
        out = Tensor(value)
        if any(t.requires_grad for t in inputs):
            out.requires_grad = True
            self.records.append(Record(op, tuple(inputs), out, backward))
        return out

    def matmul(self, a, b):
        a, b = _as_tensor(a), _as_tensor(b)
        if a.value.ndim != 2 or b.value.ndim != 2 or \
                a.shape[1] != b.shape[0]:
            raise ShapeError("matmul of {} and {}".format(a.shape, b.shape))

        def backward(g):
            return g.dot(b.value.T), a.value.T.dot(g)
        return self._apply("matmul", (a, b), a.value.dot(b.value), backward)

    def add(self, a, b):
        """Elementwise sum, broadcasting ``b`` (e.g. a bias row) over ``a``."""
        a, b = _as_tensor(a), _as_tensor(b)
        try:
            value = a.value + b.value
        except ValueError:
            raise ShapeError("add of {} and {}".format(a.shape, b.shape))

        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return self._apply("add", (a, b), value, backward)

    def mul(self, a, b):
        """Elementwise product with broadcasting."""
        a, b = _as_tensor(a), _as_tensor(b)
        try:
            value = a.value * b.value
        except ValueError:
            raise ShapeError("mul of {} and {}".format(a.shape, b.shape))

        def backward(g):
            return (_unbroadcast(g * b.value, a.shape),
                    _unbroadcast(g * a.value, b.shape))
        return self._apply("mul", (a, b), value, backward)

    def scale(self, a, factor):
        """Multiply by a constant scalar."""
        a = _as_tensor(a)

        def backward(g):
            return (g * factor,)
        return self._apply("scale", (a,), a.value * factor, backward)

    def relu(self, a):
        a = _as_tensor(a)
        active = a.value > 0

        def backward(g):
            return (g * active,)
        return self._apply("relu", (a,), np.where(active, a.value, 0.0),
                           backward)

    def sum(self, a):
        a = _as_tensor(a)

        def backward(g):
            return (np.full(a.shape, float(g)),)
        return self._apply("sum", (a,), np.array(a.value.sum()), backward)

    def propagate(self, h, rows, cols, weights, num_rows):
        """Sparse aggregation ``out[rows[k]] += weights[k] * h[cols[k]]``.

        Equivalent to multiplying ``h`` by the sparse matrix with entries
        ``(rows[k], cols[k]) = weights[k]``.
        """
        h = _as_tensor(h)
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        weights = np.asarray(weights, dtype=np.float64)[:, None]
        if not (len(rows) == len(cols) == len(weights)):
            raise ShapeError("propagate index arrays differ in length")
        value = np.zeros((num_rows,) + h.shape[1:])
        np.add.at(value, rows, weights * h.value[cols])

        def backward(g):
            grad = np.zeros(h.shape)
            np.add.at(grad, cols, weights * g[rows])
            return (grad,)
        return self._apply("propagate", (h,), value, backward)

    def segment_max(self, x, segment_ids, num_segments):
        """Per-segment elementwise maximum of the rows of ``x``.

        ``segment_ids`` must be sorted and cover every segment. Gradients flow
        only to the (first) maximal row of each segment and column.
        """
        x = _as_tensor(x)
        segment_ids, counts = _check_segments(segment_ids, num_segments,
                                              x.shape[0])
        starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
        argmax = np.stack([np.argmax(x.value[s:s + c], axis=0) + s
                           for s, c in zip(starts, counts)])
        columns = np.broadcast_to(np.arange(x.shape[1]), argmax.shape)
        value = x.value[argmax, columns]

        def backward(g):
            grad = np.zeros(x.shape)
            np.add.at(grad, (argmax, columns), g)
            return (grad,)
        return self._apply("segment_max", (x,), value, backward)

    def segment_mean(self, x, segment_ids, num_segments):
        """Per-segment mean of the rows of ``x``."""
        x = _as_tensor(x)
        segment_ids, counts = _check_segments(segment_ids, num_segments,
                                              x.shape[0])
        sums = np.zeros((num_segments, x.shape[1]))
        np.add.at(sums, segment_ids, x.value)
        value = sums / counts[:, None]

        def backward(g):
            return (g[segment_ids] / counts[segment_ids, None],)
        return self._apply("segment_mean", (x,), value, backward)

    def batch_norm(self, x, gamma, beta, mean=None, var=None, eps=1e-5):
        """Batch normalisation over rows.

        With ``mean``/``var`` omitted the batch statistics are used (training
        mode); otherwise the given statistics are treated as constants.

        Returns
        -------
        (out, mean, var)
            The normalised tensor and the statistics used.
        """
        x, gamma, beta = _as_tensor(x), _as_tensor(gamma), _as_tensor(beta)
        batch_stats = mean is None
        if batch_stats:
            mean = x.value.mean(axis=0)
            var = x.value.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + eps)
        x_hat = (x.value - mean) * inv_std
        value = gamma.value * x_hat + beta.value
        n = x.shape[0]

        def backward(g):
            d_gamma = (g * x_hat).sum(axis=0)
            d_beta = g.sum(axis=0)
            d_x_hat = g * gamma.value
            if batch_stats:
                d_x = (inv_std / n) * (n * d_x_hat - d_x_hat.sum(axis=0) -
                                       x_hat * (d_x_hat * x_hat).sum(axis=0))
            else:
                d_x = d_x_hat * inv_std
            return d_x, d_gamma, d_beta
        out = self._apply("batch_norm", (x, gamma, beta), value, backward)
        return out, mean, var

    def dropout(self, x, rate, rng):
        """Inverted dropout with a seeded generator (identity at rate 0)."""
        x = _as_tensor(x)
        if rate <= 0.0:
            return x
        keep = (rng.random_sample(x.shape) >= rate) / (1.0 - rate)

        def backward(g):
            return (g * keep,)
        return self._apply("dropout", (x,), x.value * keep, backward)

    def softmax_cross_entropy(self, logits, labels):
        """Mean softmax cross-entropy of integer ``labels``."""
        logits = _as_tensor(logits)
        labels = np.asarray(labels, dtype=np.int64)
        if logits.value.ndim != 2 or labels.shape != (logits.shape[0],):
            raise ShapeError("cross-entropy of logits {} and labels {}".format(
                logits.shape, labels.shape))
        rows = np.arange(len(labels))
        log_p = _log_softmax(logits.value)
        value = np.array(-log_p[rows, labels].mean())

        def backward(g):
            grad = np.exp(log_p)
            grad[rows, labels] -= 1.0
            return (grad * (float(g) / len(labels)),)
        return self._apply("softmax_cross_entropy", (logits,), value,
                           backward)

    def mean_entropy(self, logits):
        """Mean entropy (nats) of the row-wise softmax of ``logits``."""
        logits = _as_tensor(logits)
        log_p = _log_softmax(logits.value)
        p = np.exp(log_p)
        entropy = -(p * log_p).sum(axis=1)
        value = np.array(entropy.mean())

        def backward(g):
            grad = -p * (log_p + entropy[:, None])
            return (grad * (float(g) / logits.shape[0]),)
        return self._apply("mean_entropy", (logits,), value, backward)

    def backward(self, loss, params=None):
        """Back-propagate from a scalar loss.

        Parameters
        ----------
        loss : :py:class:`.Tensor`
            A scalar produced on this tape (or a constant, giving zero
            gradients).
        params : :py:class:`.ParamSet` or None

        Returns
        -------
        dict
            If ``params`` is given, an ordered ``{name: gradient}`` for every
            parameter (zeros where unreachable). Otherwise a mapping from
            ``id(tensor)`` to gradient for every reached tensor.
        """
        if loss.value.size != 1:
            raise ShapeError("backward needs a scalar loss, got shape "
                             "{}".format(loss.shape))
        grads = {}
        if loss.requires_grad:
            grads[id(loss)] = np.ones(loss.shape)
        for record in reversed(self.records):
            g = grads.get(id(record.output))
            if g is None:
                continue
            for tensor, grad in zip(record.inputs, record.backward(g)):
                if not tensor.requires_grad or grad is None:
                    continue
                if id(tensor) in grads:
                    grads[id(tensor)] = grads[id(tensor)] + grad
                else:
                    grads[id(tensor)] = grad
        if params is None:
            return grads
        return OrderedDict(
            (name, np.array(grads.get(id(p), np.zeros(p.shape)), copy=True))
            for name, p in iteritems(params.params))


class ParamSet(object):
    """Named trainable tensors plus optimizer state.

    Iterating yields parameter names in insertion order.
    """

    def __init__(self):
        self.params = OrderedDict()
        self.state = {}

    def add(self, name, value):
        if name in self.params:
            raise ShapeError("duplicate parameter {}".format(name))
        tensor = Tensor(np.array(value, dtype=np.float64), True, name)
        self.params[name] = tensor
        return tensor

    def __len__(self):
        return len(self.params)

    def __iter__(self):
        return iter(self.params)

    def __contains__(self, name):
        return name in self.params

    def __getitem__(self, name):
        return self.params[name]

    def items(self):
        return self.params.items()

    def values(self):
        """``{name: ndarray}`` snapshot of the parameter values."""
        return OrderedDict((n, p.value.copy()) for n, p in self.params.items())

    def copy(self):
        """A deep copy (values and optimizer state)."""
        other = ParamSet()
        for name, p in self.params.items():
            other.add(name, p.value.copy())
        other.state = copy.deepcopy(self.state)
        return other

    def reset_state(self):
        """Forget optimizer moments (e.g. before a new training run)."""
        self.state = {}


def _check_shape(params, name, grad):
    if grad.shape != params[name].shape:
        raise ShapeError("gradient of {} has shape {}, expected {}".format(
            name, grad.shape, params[name].shape))


def _commit(params, values, states=None):
    """Set the new parameter values (and optimizer states) all at once.

    Nothing is changed if any value is non-finite.
    """
    for name, value in iteritems(values):
        if not np.all(np.isfinite(value)):
            raise NumericalError(name)
    for name, value in iteritems(values):
        params[name].value = value
    if states:
        params.state.update(states)


def adam_step(params, grads, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update of the parameters named in ``grads``.

    Parameters absent from ``grads`` are left untouched (frozen). On a
    :py:class:`~fcg_robust.errors.NumericalError` neither the parameters nor
    the moment estimates change.
    """
    values = OrderedDict()
    states = {}
    for name, grad in iteritems(grads):
        _check_shape(params, name, grad)
        state = params.state.get(name)
        if state is None:
            state = {"m": np.zeros(grad.shape), "v": np.zeros(grad.shape),
                     "t": 0}
        t = state["t"] + 1
        m = beta1 * state["m"] + (1.0 - beta1) * grad
        v = beta2 * state["v"] + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1 ** t)
        v_hat = v / (1.0 - beta2 ** t)
        values[name] = params[name].value - lr * m_hat / (np.sqrt(v_hat) + eps)
        states[name] = {"m": m, "v": v, "t": t}
    _commit(params, values, states)


def sgd_step(params, grads, lr):
    """One plain gradient-descent update of the parameters in ``grads``."""
    values = OrderedDict()
    for name, grad in iteritems(grads):
        _check_shape(params, name, grad)
        values[name] = params[name].value - lr * grad
    _commit(params, values)
