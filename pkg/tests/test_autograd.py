import numpy as np
import pytest

from rcnet.autograd import OPS, Tape, gradcheck, register_op
from rcnet.tensor import Tensor


def test_unknown_op_rejected():
    t = Tape()
    x = t.leaf(Tensor(np.ones(2)))
    with pytest.raises(ValueError, match="unknown op"):
        t.record("not_an_op", (x,))


def test_bad_input_node_rejected():
    t = Tape()
    x = t.leaf(Tensor(np.ones(2)))
    with pytest.raises(ValueError, match="not on the tape"):
        t.record("add", (x, 5))


def test_backward_requires_scalar_loss():
    t = Tape()
    x = t.leaf(Tensor(np.ones(3)))
    y = t.record("add", (x, x))
    with pytest.raises(ValueError, match="scalar"):
        t.backward(y)


def test_loss_gradient_is_one():
    t = Tape()
    x = t.leaf(Tensor(np.array([2.0, 3.0])))
    loss = t.record("sum", (x,))
    grads = t.backward(loss)
    assert grads[loss].item() == 1.0


def test_fanout_accumulates_by_addition():
    # y = x*x + x -> dy/dx = 2x + 1, x feeding two ops
    t = Tape()
    x = t.leaf(Tensor(np.array([1.5, -0.5])))
    sq = t.record("mul", (x, x))
    y = t.record("add", (sq, x))
    loss = t.record("sum", (y,))
    grads = t.backward(loss)
    assert np.allclose(grads[x].data, 2 * np.array([1.5, -0.5]) + 1)


def test_mul_gradients():
    t = Tape()
    a = t.leaf(Tensor(np.array([2.0, 3.0])))
    b = t.leaf(Tensor(np.array([5.0, 7.0])))
    loss = t.record("sum", (t.record("mul", (a, b)),))
    grads = t.backward(loss)
    assert np.array_equal(grads[a].data, np.array([5.0, 7.0]))
    assert np.array_equal(grads[b].data, np.array([2.0, 3.0]))


def test_scale_and_sub_gradients():
    t = Tape()
    a = t.leaf(Tensor(np.array([1.0, 2.0])))
    b = t.leaf(Tensor(np.array([0.5, 0.5])))
    d = t.record("sub", (a, b))
    loss = t.record("sum", (t.record("scale", (d,), factor=3.0),))
    grads = t.backward(loss)
    assert np.allclose(grads[a].data, 3.0)
    assert np.allclose(grads[b].data, -3.0)


def test_mean_gradient_scaled_by_count():
    t = Tape()
    a = t.leaf(Tensor(np.ones((2, 4))))
    loss = t.record("mean", (a,))
    grads = t.backward(loss)
    assert np.allclose(grads[a].data, 1.0 / 8.0)


def test_reduction_over_axes_backward():
    rng = np.random.default_rng(0)
    a = rng.random((3, 4, 2))

    def build(params):
        t = Tape()
        nid = t.leaf(Tensor(params["a"]))
        s = t.record("sum", (nid,), axes=(1,), keepdims=True)
        m = t.record("mul", (s, s))
        loss = t.record("mean", (m,))
        return t, loss, {"a": nid}

    assert gradcheck(build, {"a": a}, tolerance=1e-7).ok


def test_backward_rerunnable():
    t = Tape()
    a = t.leaf(Tensor(np.array([1.0, 4.0])))
    loss = t.record("sum", (t.record("mul", (a, a)),))
    g1 = t.backward(loss)
    g2 = t.backward(loss)
    assert np.array_equal(g1[a].data, g2[a].data)


def test_leaf_values_round_trip():
    t = Tape()
    arr = np.arange(4, dtype=np.float64)
    nid = t.leaf(Tensor(arr))
    assert np.array_equal(t.value(nid).data, arr)


def test_register_rejects_duplicates():
    with pytest.raises(ValueError, match="already registered"):
        register_op("add", lambda ctx, a: a, lambda ctx, g: (g,))


def test_gradcheck_exact_for_linear():
    x = np.arange(-3.0, 3.0)  # integers: the difference quotient is exact

    def build(params):
        t = Tape()
        nid = t.leaf(Tensor(params["x"]))
        return t, t.record("sum", (nid,)), {"x": nid}

    rep = gradcheck(build, {"x": x}, tolerance=0.0, h=0.25)
    assert rep.ok
    assert all(e.max_rel_err == 0.0 for e in rep.entries)


def test_gradcheck_catches_wrong_backward():
    assert "broken_double" not in OPS
    register_op("broken_double",
                lambda ctx, a: 2.0 * a,
                lambda ctx, g: (3.0 * g,))  # wrong on purpose
    try:
        def build(params):
            t = Tape()
            nid = t.leaf(Tensor(params["x"]))
            return t, t.record("sum", (t.record("broken_double", (nid,)),)), \
                {"x": nid}

        rep = gradcheck(build, {"x": np.ones(3)}, tolerance=1e-4)
        assert not rep.ok
    finally:
        del OPS["broken_double"]


def test_gradcheck_report_table():
    def build(params):
        t = Tape()
        nid = t.leaf(Tensor(params["weights"]))
        return t, t.record("sum", (nid,)), {"weights": nid}

    rep = gradcheck(build, {"weights": np.ones(2)}, tolerance=1e-4)
    table = rep.format_table()
    assert "weights" in table
    assert "pass" in table
    assert "overall: pass" in table


def test_gradcheck_subsampling_deterministic():
    rng = np.random.default_rng(3)
    a = rng.random((5, 5))

    def build(params):
        t = Tape()
        nid = t.leaf(Tensor(params["a"]))
        m = t.record("mul", (nid, nid))
        return t, t.record("mean", (m,)), {"a": nid}

    r1 = gradcheck(build, {"a": a}, max_entries_per_param=4, seed=7)
    r2 = gradcheck(build, {"a": a}, max_entries_per_param=4, seed=7)
    assert r1.entries[0].max_rel_err == r2.entries[0].max_rel_err


def test_gradcheck_rejects_nonfinite_loss():
    def build(params):
        t = Tape()
        nid = t.leaf(Tensor(np.array([np.inf])))
        return t, t.record("sum", (nid,)), {"x": t.leaf(Tensor(params["x"]))}

    with pytest.raises(FloatingPointError):
        gradcheck(build, {"x": np.ones(1)})


def test_grad_shape_mismatch_detected():
    assert "bad_shape" not in OPS
    register_op("bad_shape",
                lambda ctx, a: a.sum(axis=0),
                lambda ctx, g: (g,))  # forgets to expand back
    try:
        t = Tape()
        nid = t.leaf(Tensor(np.ones((2, 3))))
        loss = t.record("sum", (t.record("bad_shape", (nid,)),))
        with pytest.raises(RuntimeError, match="gradient shape"):
            t.backward(loss)
    finally:
        del OPS["bad_shape"]
