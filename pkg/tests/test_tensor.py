import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csfnet import tensor as T
from csfnet.gradcheck import check_gradients
from csfnet.tensor import Parameter, Tensor, conv3d_reference, default_dtype


def leaf(arr, dtype=np.float64):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


# conv3d

def test_conv_identity_kernel():
    x = np.arange(8, dtype=np.float32).reshape(1, 1, 2, 2, 2)
    out = T.conv3d(Tensor(x), Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.zeros(1)))
    np.testing.assert_array_equal(out.data, x)


def test_conv_all_ones_sums_window():
    x = np.ones((1, 1, 4, 4, 4))
    w = np.ones((1, 1, 3, 3, 3))
    expected = conv3d_reference(x, w, np.zeros(1))
    assert np.all(expected == 27)
    out = T.conv3d(Tensor(x), Tensor(w), Tensor(np.zeros(1)))
    assert out.shape == (1, 1, 2, 2, 2)
    np.testing.assert_array_equal(out.data, expected)


def test_conv_strided_shape():
    x = Tensor(np.zeros((1, 1, 16, 64, 64)))
    out = T.conv3d(x, Tensor(np.zeros((8, 1, 3, 3, 3))), Tensor(np.zeros(8)), stride=2, padding=1)
    assert out.shape == (1, 8, 8, 32, 32)


def test_conv_rejects_channel_mismatch():
    with pytest.raises(ValueError, match=r"\(1, 2, 4, 4, 4\).*\(1, 3, 3, 3, 3\)|\(1, 3, 3, 3, 3\).*\(1, 2, 4, 4, 4\)"):
        T.conv3d(Tensor(np.zeros((1, 2, 4, 4, 4))), Tensor(np.zeros((1, 3, 3, 3, 3))), Tensor(np.zeros(1)))


def test_conv_rejects_empty_output():
    with pytest.raises(ValueError):
        T.conv3d(Tensor(np.zeros((1, 1, 2, 2, 2))), Tensor(np.zeros((1, 1, 3, 3, 3))), Tensor(np.zeros(1)))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(1, 2), c=st.integers(1, 3), o=st.integers(1, 3), k=st.integers(1, 3),
       stride=st.integers(1, 2), padding=st.integers(0, 1), dims=st.tuples(*[st.integers(3, 6)] * 3),
       seed=st.integers(0, 2 ** 16))
def test_conv_matches_nested_loop_reference(n, c, o, k, stride, padding, dims, seed):
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, c, *dims))
    w = r.normal(size=(o, c, k, k, k))
    b = r.normal(size=o)
    with default_dtype(np.float64):
        out = T.conv3d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
    np.testing.assert_allclose(out.data, conv3d_reference(x, w, b, stride, padding), atol=1e-5)


# pooling / upsampling

def test_avg_pool_constant():
    out = T.pool3d(Tensor(np.full((1, 2, 4, 4, 4), 7.0)), "avg", 2)
    assert np.all(out.data == 7.0)


def test_global_pool_enumerated():
    x = Tensor(np.arange(1, 9, dtype=np.float64).reshape(1, 1, 2, 2, 2))
    assert T.global_pool3d(x, "max").data.item() == 8.0
    assert T.global_pool3d(x, "avg").data.item() == 4.5


def test_max_pool_gradient_routes_to_argmax(f64):
    data = np.zeros((1, 1, 2, 2, 2))
    data[0, 0, 1, 0, 1] = 5.0
    x = leaf(data)
    T.pool3d(x, "max", 2).sum().backward()
    expected = np.zeros_like(data)
    expected[0, 0, 1, 0, 1] = 1.0
    np.testing.assert_array_equal(x.grad, expected)


def test_pool_kernel_too_large():
    with pytest.raises(ValueError, match="exceeds"):
        T.pool3d(Tensor(np.zeros((1, 1, 2, 2, 2))), "avg", 3)


def test_upsample_identity_and_replication():
    x = np.random.default_rng(0).normal(size=(1, 2, 2, 3, 2)).astype(np.float32)
    np.testing.assert_array_equal(T.upsample3d(Tensor(x), 1).data, x)
    out = T.upsample3d(Tensor(np.full((1, 1, 1, 1, 1), 3.0)), 2)
    assert out.shape == (1, 1, 2, 2, 2) and np.all(out.data == 3.0)
    with pytest.raises(ValueError):
        T.upsample3d(Tensor(x), 0)


@settings(max_examples=20, deadline=None)
@given(factor=st.integers(1, 3), seed=st.integers(0, 1000))
def test_upsample_sum_scales_by_factor_cubed(factor, seed):
    x = np.random.default_rng(seed).normal(size=(2, 2, 2, 3, 2))
    with default_dtype(np.float64):
        out = T.upsample3d(Tensor(x), factor)
    assert out.data.sum() == pytest.approx(factor ** 3 * x.sum(), rel=1e-12, abs=1e-12)


# softmax and elementwise

def test_softmax_examples(f64):
    np.testing.assert_allclose(T.softmax(Tensor(np.zeros(4)), 0).data, 0.25)
    np.testing.assert_allclose(T.softmax(Tensor([0.0, math.log(2)]), 0).data, [1 / 3, 2 / 3], rtol=1e-15)
    np.testing.assert_array_equal(T.softmax(Tensor([1000.0, 1000.0]), 0).data, [0.5, 0.5])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10 ** 6), shift=st.floats(-100, 100), axis=st.integers(0, 2))
def test_softmax_normalized_and_shift_invariant(seed, shift, axis):
    x = np.random.default_rng(seed).normal(scale=5, size=(3, 4, 5))
    with default_dtype(np.float64):
        p = T.softmax(Tensor(x), axis).data
        q = T.softmax(Tensor(x + shift), axis).data
    assert np.all(p > 0) and np.all(p < 1)
    np.testing.assert_allclose(p.sum(axis=axis), 1.0, atol=1e-6)
    assert np.max(np.abs(p - q)) < 1e-6


def test_elementwise_examples(f64):
    assert T.sigmoid(Tensor([0.0])).data[0] == 0.5
    np.testing.assert_array_equal(T.relu(Tensor([-2.5, 2.5])).data, [0.0, 2.5])
    out = T.concat([Tensor(np.zeros((1, 3, 4, 4, 4))), Tensor(np.zeros((1, 5, 4, 4, 4)))], axis=1)
    assert out.shape == (1, 8, 4, 4, 4)


def test_relu_subgradient_zero_at_zero(f64):
    x = leaf([0.0, 1.0])
    T.relu(x).sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        T.add(Tensor(np.zeros(3)), Tensor(np.zeros(4)))
    with pytest.raises(ValueError):
        T.concat([Tensor(np.zeros((1, 3, 4))), Tensor(np.zeros((1, 3, 5)))], axis=1)


def test_sigmoid_extreme_inputs_finite(f64):
    out = T.sigmoid(Tensor([-1000.0, 1000.0])).data
    np.testing.assert_array_equal(out, [0.0, 1.0])


# linear

def test_linear_examples(f64):
    x = Tensor(np.random.default_rng(0).normal(size=(2, 3)))
    np.testing.assert_array_equal(T.linear(x, Tensor(np.eye(3)), Tensor(np.zeros(3))).data, x.data)
    out = T.linear(Tensor([[1.0, 2.0, 3.0]]), Tensor(np.ones((1, 3))), Tensor([0.0]))
    assert out.data.item() == 6.0
    b = leaf(np.zeros(4))
    T.linear(x, leaf(np.ones((4, 3))), b).sum().backward()
    np.testing.assert_array_equal(b.grad, np.full(4, 2.0))
    with pytest.raises(ValueError):
        T.linear(x, Tensor(np.ones((4, 2))), Tensor(np.zeros(4)))


# cross entropy

def test_cross_entropy_examples(f64):
    assert T.cross_entropy(Tensor([[50.0, -50.0]]), [0]).data < 1e-6
    for label in (0, 1):
        assert T.cross_entropy(Tensor([[0.0, 0.0]]), [label]).data == pytest.approx(math.log(2), abs=1e-15)
    logits = np.array([[0.3, -1.2], [2.0, 0.5]])
    per_case = [math.log(math.exp(logits[0, 0]) + math.exp(logits[0, 1])) - logits[0, 1],
                math.log(math.exp(logits[1, 0]) + math.exp(logits[1, 1])) - logits[1, 0]]
    assert T.cross_entropy(Tensor(logits), [1, 0]).data == pytest.approx(np.mean(per_case), rel=1e-14)
    with pytest.raises(ValueError, match="0 or 1"):
        T.cross_entropy(Tensor(logits), [2, 0])


# backward

def test_backward_linear_and_square(f64):
    x = leaf(np.random.default_rng(1).normal(size=(3, 2)))
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 2)))
    y = leaf(np.random.default_rng(2).normal(size=5))
    (y * y).sum().backward()
    np.testing.assert_allclose(y.grad, 2 * y.data, rtol=1e-15)


def test_backward_rejects_non_scalar(f64):
    with pytest.raises(ValueError):
        (leaf(np.ones(3)) * 2.0).backward()


def test_backward_accumulates_across_calls(f64):
    x = leaf(np.ones(3))
    x.sum().backward()
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.full(3, 2.0))


def test_diamond_sums_branches(f64):
    data = np.random.default_rng(3).normal(size=(2, 3))
    x = leaf(data)
    h = T.sigmoid(x)
    (h * h + T.relu(h)).sum().backward()
    s = 1 / (1 + np.exp(-data))
    np.testing.assert_allclose(x.grad, (2 * s + 1) * s * (1 - s), rtol=1e-12)
    res = check_gradients(lambda: (T.sigmoid(x) * T.sigmoid(x) + T.relu(T.sigmoid(x))).sum(), {"x": x})
    assert res["x"] < 1e-8


def test_backward_visits_each_node_once(f64, monkeypatch):
    calls = []
    original = T.Mul.backward

    def counting(self, grad):
        calls.append(id(self))
        return original(self, grad)

    monkeypatch.setattr(T.Mul, "backward", counting)
    x = leaf(np.ones(3))
    h = x * 2.0
    (h + h + h).sum().backward()
    assert len(calls) == 1
    np.testing.assert_array_equal(x.grad, np.full(3, 6.0))


def test_float32_default_and_float64_mode():
    assert Tensor([1.0]).dtype == np.float32
    with default_dtype(np.float64):
        assert Tensor([1.0]).dtype == np.float64
        p = Parameter(np.zeros(2))
        assert p.adam_m.shape == (2,) and p.step_count == 0
    assert Tensor([1.0]).dtype == np.float32
