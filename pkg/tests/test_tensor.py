import numpy as np
import pytest

from rcnet import tensor
from rcnet.tensor import Tensor


def test_wraps_f32_and_f64():
    for dtype in (np.float32, np.float64):
        t = Tensor(np.ones((2, 3), dtype=dtype))
        assert t.dtype == dtype
        assert t.shape == (2, 3)
        assert t.size == 6


def test_rejects_other_dtypes():
    with pytest.raises(TypeError):
        Tensor(np.ones((2, 2), dtype=np.int32))


def test_rejects_rank_over_four():
    with pytest.raises(ValueError):
        tensor.zeros((1, 1, 1, 1, 1))


def test_rejects_nonpositive_dims():
    with pytest.raises(ValueError):
        tensor.zeros((2, 0))


def test_scalar_rank_zero_allowed():
    t = Tensor(np.float64(3.5))
    assert t.shape == ()
    assert t.item() == 3.5


def test_data_is_contiguous():
    base = np.arange(12, dtype=np.float32).reshape(3, 4)
    t = Tensor(base[:, ::2])  # non-contiguous view
    assert t.data.flags.c_contiguous
    assert np.array_equal(t.data, base[:, ::2])


def test_creation_helpers():
    assert np.array_equal(tensor.zeros((2, 2)).data, np.zeros((2, 2)))
    assert np.array_equal(tensor.ones((2,)).data, np.ones(2))
    assert np.array_equal(tensor.full((2,), 7.0).data, np.full(2, 7.0))
    z = tensor.zeros_like(tensor.ones((3, 1), dtype=np.float64))
    assert z.dtype == np.float64 and z.shape == (3, 1)


def test_elementwise_ops_shape_checked():
    a = tensor.from_array(np.ones((2, 2), np.float32))
    b = tensor.from_array(np.full((2, 2), 2.0, np.float32))
    assert np.array_equal(tensor.add(a, b).data, np.full((2, 2), 3.0))
    assert np.array_equal(tensor.sub(a, b).data, np.full((2, 2), -1.0))
    assert np.array_equal(tensor.mul(a, b).data, np.full((2, 2), 2.0))
    with pytest.raises(ValueError):
        tensor.add(a, tensor.from_array(np.ones((2, 3), np.float32)))


def test_scalar_broadcast_only():
    a = tensor.from_array(np.ones((2, 2), np.float32))
    s = Tensor(np.float32(2.0))
    assert np.array_equal(tensor.mul(a, s).data, np.full((2, 2), 2.0))
    # no general broadcasting: a row vector against a matrix must fail
    with pytest.raises(ValueError):
        tensor.mul(a, tensor.from_array(np.ones((1, 2), np.float32)))


def test_scale():
    a = tensor.from_array(np.array([1.0, -2.0], np.float32))
    assert np.array_equal(tensor.scale(a, 0.5).data,
                          np.array([0.5, -1.0], np.float32))


def test_reductions():
    a = tensor.from_array(np.arange(6, dtype=np.float64).reshape(2, 3))
    assert tensor.tsum(a).item() == 15.0
    assert tensor.tmean(a).item() == 2.5
    assert np.array_equal(tensor.tsum(a, axes=(0,)).data,
                          np.array([3.0, 5.0, 7.0]))
    kept = tensor.tsum(a, axes=(1,), keepdims=True)
    assert kept.shape == (2, 1)
    with pytest.raises(ValueError):
        tensor.tsum(a, axes=(2,))


def test_operators():
    a = Tensor(np.array([1.0, 2.0]))
    b = Tensor(np.array([3.0, 4.0]))
    assert np.array_equal((a + b).data, np.array([4.0, 6.0]))
    assert np.array_equal((a - b).data, np.array([-2.0, -2.0]))
    assert np.array_equal((a * b).data, np.array([3.0, 8.0]))
    assert np.array_equal((-a).data, np.array([-1.0, -2.0]))


def test_reshape_and_astype():
    a = tensor.from_array(np.arange(4, dtype=np.float32))
    r = a.reshape((2, 2))
    assert r.shape == (2, 2)
    d = a.astype(np.float64)
    assert d.dtype == np.float64
    assert np.array_equal(d.data, a.data.astype(np.float64))


def test_debug_finite_check(monkeypatch):
    monkeypatch.setattr(tensor, "DEBUG_CHECK_FINITE", True)
    with pytest.raises(FloatingPointError):
        Tensor(np.array([1.0, np.nan]))
    monkeypatch.setattr(tensor, "DEBUG_CHECK_FINITE", False)
    Tensor(np.array([1.0, np.nan]))  # permitted outside debug mode
