import math

import numpy as np
import pytest

from conftest import check_grads
from ffnmt import numerics as nx
from ffnmt.errors import ConfigError, DimensionError, NumericError, StateError


def test_rng_streams_are_reproducible_and_independent():
    a, b = nx.SeededRng(7), nx.SeededRng(7)
    assert np.array_equal(a.normal((3, 4)), b.normal((3, 4)))
    assert np.array_equal(a.spawn(1).random(5), b.spawn(1).random(5))
    assert not np.array_equal(a.spawn(1).random(5), a.spawn(2).random(5))
    assert not np.array_equal(a.spawn(1, 0).random(5), a.spawn(0, 1).random(5))


def test_dropout_mask_inverted_scaling(rng):
    m = nx.dropout_mask((200, 50), 0.25, rng)
    assert set(np.unique(m)) <= {0.0, 1.0 / 0.75}
    assert abs(m.mean() - 1.0) < 0.02
    assert np.all(nx.dropout_mask((3, 3), 0.5, rng, train=False) == 1.0)
    assert np.all(nx.dropout_mask((3, 3), 0.0, None) == 1.0)
    with pytest.raises(ConfigError):
        nx.dropout_mask((2,), 1.0, rng)
    with pytest.raises(ConfigError):
        nx.dropout_mask((2,), 0.5, None)


def test_check_finite():
    nx.check_finite(np.ones(3))
    with pytest.raises(NumericError, match="nan=1"):
        nx.check_finite(np.array([1.0, np.nan]))


def test_sigmoid_stable_at_extremes():
    out = nx.sigmoid(np.array([-800.0, 0.0, 800.0]))
    assert np.all(np.isfinite(out))
    assert out[1] == 0.5 and out[0] == pytest.approx(0.0) and out[2] == pytest.approx(1.0)


def test_softmax_shift_invariance_and_extremes():
    x = np.array([[1.0, 2.0, 3.0]])
    assert np.allclose(nx.softmax(x), nx.softmax(x + 1000.0))
    big = nx.log_softmax(np.array([[1000.0, 0.0]]))
    assert np.all(np.isfinite(big)) and big[0, 0] == pytest.approx(0.0)
    with pytest.raises(DimensionError):
        nx.softmax(np.zeros((2, 0)))


def test_masked_softmax_zero_weight_on_padding():
    scores = np.array([[1.0, 5.0], [2.0, 0.0], [50.0, 1.0]])
    mask = np.array([[1, 1], [1, 1], [0, 1]])
    w = nx.masked_softmax(scores, mask)
    assert w[2, 0] == 0.0
    assert np.allclose(w.sum(axis=0), 1.0)
    assert w[0, 0] == pytest.approx(1 / (1 + math.e))


def test_cross_entropy_value():
    logits = np.array([[0.0, 0.0], [math.log(3.0), 0.0]])
    # -log(1/2) - log(3/4), second row weighted by 2
    val = nx.cross_entropy(logits, [1, 0], [1.0, 2.0])
    assert float(val) == pytest.approx(math.log(2) - 2 * math.log(0.75))
    with pytest.raises(DimensionError):
        nx.cross_entropy(np.zeros((2, 3)), [0])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        nx.matmul(np.zeros((2, 3)), np.zeros((4, 5)))


def test_tape_lifecycle_errors():
    tape = nx.Tape()
    x = tape.leaf(np.ones(2), "x")
    with pytest.raises(StateError):
        tape.backward(x)
    y = nx.total(nx.mul(x, x))
    assert tape.backward(y)["x"].tolist() == [2.0, 2.0]
    with pytest.raises(StateError):
        tape.backward(y)
    other = nx.Tape()
    z = nx.total(other.leaf(np.ones(2)))
    with pytest.raises(StateError):
        nx.Tape().backward(z)


def test_mixing_tapes_is_refused():
    a, b = nx.Tape().leaf(np.ones(2)), nx.Tape().leaf(np.ones(2))
    with pytest.raises(StateError):
        nx.add(a, b)


def test_no_grad_path_returns_arrays():
    assert isinstance(nx.tanh(np.zeros(3)), np.ndarray)
    assert isinstance(nx.linear(np.zeros((2, 3)), np.zeros((4, 3))), np.ndarray)


def test_gradient_accumulates_over_reuse():
    tape = nx.Tape()
    x = tape.leaf(np.array([3.0]), "x")
    g = tape.backward(nx.total(x * x + x * 2.0))
    assert g["x"][0] == pytest.approx(8.0)


@pytest.mark.parametrize("op", ["add", "sub", "mul"])
def test_broadcast_binary_grads(op, rng):
    fn = getattr(nx, op)
    leaves = {"a": rng.normal((3, 4)), "b": rng.normal((4,))}
    check_grads(lambda t, v: nx.total(fn(v["a"], v["b"])), leaves)


@pytest.mark.parametrize("kind", ["sigmoid", "tanh"])
def test_unary_grads(kind, rng):
    leaves = {"x": rng.normal((5,))}
    check_grads(lambda t, v: nx.total(nx.mul(nx.activations(v["x"], kind), np.arange(5.0))), leaves)


def test_exp_grad(rng):
    check_grads(lambda t, v: nx.total(nx.exp(v["x"])), {"x": rng.normal((5,))})


def test_log_grad(rng):
    leaves = {"x": rng.random((4,)) + 0.5}
    check_grads(lambda t, v: nx.total(nx.log(v["x"])), leaves)


def test_linear_concat_getitem_grads(rng):
    leaves = {"x": rng.normal((3, 2)), "y": rng.normal((3, 3)), "w": rng.normal((5, 5))}
    weights = rng.normal((3, 2))

    def fn(t, v):
        z = nx.linear(nx.concat([v["x"], v["y"]], axis=-1), v["w"])
        return nx.total(nx.mul(nx.getitem(z, (slice(None), slice(1, 3))), weights))

    check_grads(fn, leaves)


def test_fancy_getitem_accumulates_duplicates(rng):
    leaves = {"x": rng.normal((4,))}
    check_grads(lambda t, v: nx.total(nx.getitem(v["x"], np.array([0, 0, 2]))), leaves)


def test_stack_reshape_total_axis_grads(rng):
    leaves = {"a": rng.normal((2, 3)), "b": rng.normal((2, 3))}
    weights = rng.normal((3,))

    def fn(t, v):
        s = nx.reshape(nx.stack([v["a"], v["b"]]), (4, 3))
        return nx.total(nx.mul(nx.total(s, axis=0), weights))

    check_grads(fn, leaves)


def test_embedding_and_selection_grads(rng):
    leaves = {"E": rng.normal((5, 3)), "x": rng.normal((4, 2, 3))}
    mask = np.array([[1, 1], [1, 1], [1, 0], [0, 0]])
    w = rng.normal((2, 3))

    def fn(t, v):
        rows = nx.take_rows(v["E"], np.array([[1, 1], [4, 0]]))
        m = nx.masked_max(v["x"], mask)
        g = nx.gather_steps(v["x"], np.array([2, 1]))
        return nx.total(nx.mul(nx.add(nx.total(rows, axis=0), nx.add(m, g)), w))

    check_grads(fn, leaves)


def test_masked_max_ignores_padding():
    x = np.array([[[1.0]], [[9.0]]])
    assert nx.masked_max(x, np.array([[1], [0]]))[0, 0] == 1.0
    with pytest.raises(DimensionError):
        nx.masked_max(x, np.zeros((2, 1)))


def test_softmax_family_grads(rng):
    leaves = {"s": rng.normal((4, 3))}
    mask = np.array([[1, 1, 1], [1, 0, 1], [1, 1, 0], [0, 1, 1]])
    w = rng.normal((4, 3))

    def fn(t, v):
        a = nx.mul(nx.masked_softmax(v["s"], mask), w)
        b = nx.mul(nx.softmax(v["s"]), w)
        c = nx.mul(nx.log_softmax(v["s"], axis=0), w)
        return nx.add(nx.add(nx.total(a), nx.total(b)), nx.total(c))

    check_grads(fn, leaves)


def test_cross_entropy_grad(rng):
    leaves = {"z": rng.normal((3, 5))}
    check_grads(lambda t, v: nx.cross_entropy(v["z"], [0, 4, 2], [1.0, 0.5, 0.0]), leaves)


def test_lstm_cell_matches_hand_value():
    # all pre-activations and peepholes zero, f gives z = 1: s = tanh(1)/2, h = tanh(s)/2
    d = 1
    f = np.array([[1.0, 0.0, 0.0, 0.0]])
    z = np.zeros((1, d))
    h, s = nx.lstm_cell(f, z, z, np.zeros((4, 1)), np.zeros(1), np.zeros(1), np.zeros(1))
    assert s[0, 0] == pytest.approx(math.tanh(1.0) / 2, abs=1e-12)
    assert h[0, 0] == pytest.approx(math.tanh(math.tanh(1.0) / 2) / 2, abs=1e-12)


def test_lstm_cell_grads(rng):
    d = 3
    leaves = {"f": rng.normal((2, 4 * d)), "h": rng.normal((2, d)), "s": rng.normal((2, d)),
              "W": rng.normal((4 * d, d)), "a": rng.normal((d,)), "b": rng.normal((d,)), "c": rng.normal((d,))}
    w1, w2 = rng.normal((2, d)), rng.normal((2, d))

    def fn(t, v):
        h, s = nx.lstm_cell(v["f"], v["h"], v["s"], v["W"], v["a"], v["b"], v["c"])
        return nx.add(nx.total(nx.mul(h, w1)), nx.total(nx.mul(s, w2)))

    check_grads(fn, leaves)


@pytest.mark.parametrize("reverse", [False, True])
def test_lstm_scan_matches_stepwise_and_grads(reverse, rng):
    d, T, B = 2, 4, 3
    f = rng.normal((T, B, 4 * d))
    ps = [rng.normal((4 * d, d)), rng.normal((d,)), rng.normal((d,)), rng.normal((d,))]
    mask = np.array([[1, 1, 1], [1, 1, 1], [1, 0, 1], [1, 0, 0]], dtype=float)
    h, s = nx.lstm_scan(f, *ps, mask=mask, reverse=reverse)
    for b in range(B):
        n = int(mask[:, b].sum())
        hp = sp = np.zeros((1, d))
        order = range(n - 1, -1, -1) if reverse else range(n)
        for t in order:
            hp, sp = nx.lstm_cell(f[t, b][None], hp, sp, *ps)
            assert np.allclose(h[t, b], hp[0])
            assert np.allclose(s[t, b], sp[0])
        assert np.all(h[n:, b] == 0.0)
    w = rng.normal((T, B, d))
    leaves = {"f": f, "W": ps[0], "a": ps[1], "b": ps[2], "c": ps[3]}

    def fn(t, v):
        hh, ss = nx.lstm_scan(v["f"], v["W"], v["a"], v["b"], v["c"], mask=mask, reverse=reverse)
        return nx.add(nx.total(nx.mul(hh, w)), nx.total(ss))

    check_grads(fn, leaves)


def test_relative_error_floor():
    assert nx.relative_error(np.array([1e-9]), np.array([0.0]))[0] == pytest.approx(1e-6)
    assert nx.relative_error(np.array([2.0]), np.array([1.0]))[0] == pytest.approx(0.5)


def test_numeric_gradient_restores_array():
    a = np.array([1.0, 2.0])
    g = nx.numeric_gradient(lambda: float((a ** 2).sum()), a)
    assert np.allclose(g, [2.0, 4.0]) and a.tolist() == [1.0, 2.0]
