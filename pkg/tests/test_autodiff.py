import pytest

import numpy as np

from fcg_robust.autodiff import ParamSet, Tape, Tensor, adam_step, sgd_step

from fcg_robust.errors import NumericalError, ShapeError


def numeric_gradients(params, loss_fn, h=1e-6):
    """Central finite differences of ``loss_fn(params)`` for every
    parameter entry."""
    out = {}
    for name, p in params.items():
        grad = np.zeros(p.shape)
        for index in np.ndindex(*p.shape):
            original = p.value[index]
            p.value[index] = original + h
            plus = float(loss_fn(Tape(), params).value)
            p.value[index] = original - h
            minus = float(loss_fn(Tape(), params).value)
            p.value[index] = original
            grad[index] = (plus - minus) / (2 * h)
        out[name] = grad
    return out


def relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b),
                                       1e-6)


def check_gradients(params, loss_fn):
    tape = Tape()
    analytic = tape.backward(loss_fn(tape, params), params)
    numeric = numeric_gradients(params, loss_fn)
    for name in params:
        assert relative_error(analytic[name], numeric[name]) < 1e-5, name


@pytest.fixture
def rng():
    return np.random.RandomState(42)


def make_params(rng, **shapes):
    params = ParamSet()
    for name, shape in sorted(shapes.items()):
        params.add(name, rng.standard_normal(shape))
    return params


SEGMENTS = np.array([0, 0, 1, 1, 1, 2])
LABELS = np.array([1, 0, 2])


@pytest.mark.parametrize("name,loss_fn", [
    ("matmul", lambda t, p: t.sum(t.matmul(p["x"], p["w"]))),
    ("add", lambda t, p: t.sum(t.mul(t.add(p["x"], p["b"]),
                                     t.add(p["x"], p["b"])))),
    ("mul", lambda t, p: t.sum(t.mul(p["x"], p["x"]))),
    ("scale", lambda t, p: t.sum(t.mul(t.scale(p["x"], -2.5), p["x"]))),
    ("relu", lambda t, p: t.sum(t.mul(t.relu(p["x"]), p["x"]))),
    ("propagate", lambda t, p: t.sum(t.mul(
        t.propagate(p["x"], [0, 0, 3, 5, 5], [1, 2, 3, 0, 5],
                    [0.5, 1.0, 2.0, -1.0, 0.25], 6), p["x"]))),
    ("segment_max", lambda t, p: t.sum(t.mul(
        t.segment_max(p["x"], SEGMENTS, 3), p["y"]))),
    ("segment_mean", lambda t, p: t.sum(t.mul(
        t.segment_mean(p["x"], SEGMENTS, 3), p["y"]))),
    ("batch_norm", lambda t, p: t.sum(t.mul(
        t.batch_norm(p["x"], p["gamma"], p["b"])[0], p["x"]))),
    ("batch_norm_fixed_stats", lambda t, p: t.sum(t.mul(
        t.batch_norm(p["x"], p["gamma"], p["b"], np.full(3, 0.1),
                     np.full(3, 2.0))[0], p["x"]))),
    ("softmax_cross_entropy", lambda t, p: t.softmax_cross_entropy(
        p["y"], LABELS)),
    ("mean_entropy", lambda t, p: t.mean_entropy(p["y"])),
])
def test_primitive_gradients(rng, name, loss_fn):
    params = make_params(rng, x=(6, 3), w=(3, 4), b=(3, ), gamma=(3, ),
                         y=(3, 3))
    check_gradients(params, loss_fn)


def test_dropout_gradient(rng):
    params = make_params(rng, x=(5, 4))
    mask_seed = 7

    def loss_fn(t, p):
        return t.sum(t.mul(t.dropout(p["x"], 0.5,
                                     np.random.RandomState(mask_seed)),
                           p["x"]))
    check_gradients(params, loss_fn)


def random_composition(rng):
    """A random chain of up to five operations ending in a scalar loss."""
    steps = []
    for _ in range(rng.randint(1, 6)):
        steps.append(rng.choice(["matmul", "add", "mul", "scale", "relu",
                                 "propagate", "batch_norm"]))
    head = rng.choice(["segment_max", "segment_mean"])
    loss = rng.choice(["cross_entropy", "entropy", "sum"])
    rows = rng.randint(0, 6, size=8)
    cols = rng.randint(0, 6, size=8)
    weights = rng.standard_normal(8)
    factor = rng.standard_normal()

    def loss_fn(t, p):
        h = p["x"]
        for step in steps:
            if step == "matmul":
                h = t.matmul(h, p["w"])
            elif step == "add":
                h = t.add(h, p["b"])
            elif step == "mul":
                h = t.mul(h, p["x"])
            elif step == "scale":
                h = t.scale(h, factor)
            elif step == "relu":
                h = t.relu(h)
            elif step == "propagate":
                h = t.add(t.propagate(h, rows, cols, weights, 6), h)
            else:
                h, _, _ = t.batch_norm(h, p["gamma"], p["b"])
        if head == "segment_max":
            h = t.segment_max(h, SEGMENTS, 3)
        else:
            h = t.segment_mean(h, SEGMENTS, 3)
        if loss == "cross_entropy":
            return t.softmax_cross_entropy(h, LABELS)
        elif loss == "entropy":
            return t.mean_entropy(h)
        return t.sum(h)
    return loss_fn


def test_random_compositions(rng):
    for _ in range(50):
        params = make_params(rng, x=(6, 3), w=(3, 3), b=(3, ), gamma=(3, ))
        check_gradients(params, random_composition(rng))


def test_unused_parameters_get_zero_gradients():
    params = ParamSet()
    params.add("used", np.ones(2))
    params.add("unused", np.ones((2, 2)))
    tape = Tape()
    grads = tape.backward(tape.sum(params["used"]), params)
    assert list(grads) == ["used", "unused"]
    assert grads["used"].tolist() == [1.0, 1.0]
    assert not grads["unused"].any()


def test_constants_are_not_recorded():
    tape = Tape()
    out = tape.relu(tape.matmul(Tensor(np.eye(2)), Tensor(np.ones((2, 2)))))
    assert len(tape) == 0
    assert not out.requires_grad
    params = ParamSet()
    params.add("w", np.ones(2))
    assert not tape.backward(tape.sum(out), params)["w"].any()


def test_detached_parameters_get_no_gradient():
    params = ParamSet()
    w = params.add("w", np.ones((2, 2)))
    tape = Tape()
    loss = tape.sum(tape.matmul(Tensor(np.eye(2)), w.detach()))
    assert not tape.backward(loss, params)["w"].any()


def test_backward_needs_scalar():
    params = ParamSet()
    w = params.add("w", np.ones((2, 2)))
    tape = Tape()
    with pytest.raises(ShapeError):
        tape.backward(tape.relu(w), params)


@pytest.mark.parametrize("op", [
    lambda t: t.matmul(np.ones((2, 3)), np.ones((2, 3))),
    lambda t: t.add(np.ones((2, 3)), np.ones((2, 2))),
    lambda t: t.segment_max(np.ones((3, 2)), [1, 0, 0], 2),
    lambda t: t.segment_max(np.ones((3, 2)), [0, 0, 2], 3),
    lambda t: t.segment_mean(np.ones((3, 2)), [0, 0], 1),
    lambda t: t.softmax_cross_entropy(np.ones((3, 2)), [0, 1]),
    lambda t: t.propagate(np.ones((3, 2)), [0], [0, 1], [1.0], 3),
])
def test_shape_errors(op):
    with pytest.raises(ShapeError):
        op(Tape())


def test_segment_max_first_maximum():
    params = ParamSet()
    x = params.add("x", [[1.0, 5.0], [1.0, 2.0], [0.0, 7.0]])
    tape = Tape()
    out = tape.segment_max(x, [0, 0, 1], 2)
    assert out.value.tolist() == [[1.0, 5.0], [0.0, 7.0]]
    grads = tape.backward(tape.sum(out), params)
    assert grads["x"].tolist() == [[1.0, 1.0], [0.0, 0.0], [1.0, 1.0]]


def test_cross_entropy_value():
    tape = Tape()
    loss = tape.softmax_cross_entropy(np.zeros((2, 4)), [0, 3])
    assert float(loss.value) == pytest.approx(np.log(4))
    assert float(tape.mean_entropy(np.zeros((1, 4))).value) == \
        pytest.approx(np.log(4))


def test_dropout_zero_rate_is_identity():
    x = Tensor(np.ones(3), True)
    assert Tape().dropout(x, 0.0, np.random.RandomState(0)) is x


def test_adam_step_updates_only_given():
    params = ParamSet()
    params.add("a", np.zeros(2))
    params.add("b", np.zeros(2))
    adam_step(params, {"a": np.array([1.0, -1.0])}, lr=0.1)
    # the first Adam step moves by lr * sign(grad)
    assert np.allclose(params["a"].value, [-0.1, 0.1])
    assert params["b"].value.tolist() == [0.0, 0.0]
    assert params.state["a"]["t"] == 1
    params.reset_state()
    assert params.state == {}


def test_sgd_step():
    params = ParamSet()
    params.add("a", np.ones(2))
    sgd_step(params, {"a": np.array([1.0, 2.0])}, lr=0.5)
    assert params["a"].value.tolist() == [0.5, 0.0]


def test_non_finite_update():
    params = ParamSet()
    params.add("a", np.ones(2))
    with pytest.raises(NumericalError) as excinfo:
        sgd_step(params, {"a": np.array([np.inf, 0.0])}, lr=1.0)
    assert excinfo.value.parameter == "a"
    with pytest.raises(ShapeError):
        sgd_step(params, {"a": np.ones(3)}, lr=1.0)


def test_param_set():
    params = ParamSet()
    params.add("a", [1.0])
    with pytest.raises(ShapeError):
        params.add("a", [2.0])
    other = params.copy()
    other["a"].value[0] = 5.0
    assert params["a"].value[0] == 1.0
    snapshot = params.values()
    snapshot["a"][0] = 3.0
    assert params["a"].value[0] == 1.0
    assert "a" in params and len(params) == 1


def test_failed_update_changes_nothing():
    params = ParamSet()
    params.add("a", np.ones(2))
    params.add("b", np.ones(2))
    adam_step(params, {"a": np.ones(2), "b": np.ones(2)}, lr=0.1)
    before = params.copy()
    with pytest.raises(NumericalError) as excinfo:
        adam_step(params, {"a": np.ones(2), "b": np.array([np.nan, 1.0])},
                  lr=0.1)
    assert excinfo.value.parameter == "b"
    for name in ("a", "b"):
        assert params[name].value.tolist() == before[name].value.tolist()
        assert params.state[name]["t"] == 1
        assert params.state[name]["m"].tolist() == \
            before.state[name]["m"].tolist()
    with pytest.raises(NumericalError):
        sgd_step(params, {"a": np.ones(2), "b": np.array([np.inf, 0.0])},
                 lr=1.0)
    assert params["a"].value.tolist() == before["a"].value.tolist()


def minimise_quadratic(steps, lr=0.01):
    params = ParamSet()
    params.add("x", [1.0, -0.5, 0.25])
    for _ in range(steps):
        tape = Tape()
        x = params["x"]
        loss = tape.sum(tape.mul(x, x))
        adam_step(params, tape.backward(loss, params), lr)
    return params


def test_adam_minimises_quadratic():
    params = minimise_quadratic(500)
    assert np.abs(params["x"].value).max() < 1e-3


def test_adam_is_deterministic():
    a = minimise_quadratic(100)
    b = minimise_quadratic(100)
    assert a["x"].value.tolist() == b["x"].value.tolist()
    for key in ("m", "v", "t"):
        assert np.array_equal(a.state["x"][key], b.state["x"][key])


def test_batch_norm_frozen_statistics(rng):
    x = rng.standard_normal((7, 3)) * 4.0 + 2.0
    gamma, beta = rng.standard_normal(3), rng.standard_normal(3)
    train, mean, var = Tape().batch_norm(x, gamma, beta)
    frozen, mean2, var2 = Tape().batch_norm(x, gamma, beta, mean, var)
    assert np.allclose(frozen.value, train.value)
    assert mean2 is mean and var2 is var
    # normalised columns have zero mean and unit variance before the affine
    plain, _, _ = Tape().batch_norm(x, np.ones(3), np.zeros(3))
    assert np.allclose(plain.value.mean(axis=0), 0.0)
    assert np.allclose(plain.value.var(axis=0), 1.0, atol=1e-4)
