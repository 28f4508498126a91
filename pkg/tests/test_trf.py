import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from csfnet import tensor as T
from csfnet.gradcheck import MODULE_CHECKS, check_gradients, run_check
from csfnet.tensor import Tensor, default_dtype
from csfnet.trf import TemporalResidualFusion, trf_fuse, trf_refine


def make(channels=3, seed=0):
    return TemporalResidualFusion(channels, np.random.default_rng(seed))


def pair(rng, shape=(1, 3, 2, 4, 4)):
    return Tensor(rng.normal(size=shape)), Tensor(rng.normal(size=shape))


def test_zero_inputs_give_zero(f64):
    trf = make()
    z = Tensor(np.zeros((1, 3, 2, 4, 4)))
    assert np.all(trf_refine(z, z, trf).data == 0)


def test_refine_shape_round_trip():
    with default_dtype(np.float64):
        trf = TemporalResidualFusion(32, np.random.default_rng(0))
        t0, t1 = pair(np.random.default_rng(1), (1, 32, 2, 8, 8))
        assert trf_refine(t0, t1, trf).shape == (1, 32, 2, 8, 8)


def test_refine_equals_conv_of_concat(f64, rng):
    trf = make(4)
    t0, t1 = pair(rng, (2, 4, 2, 3, 4))
    direct = trf.fuse_conv(T.concat([t0, t1], axis=1))
    np.testing.assert_allclose(trf_refine(t0, t1, trf).data, direct.data, atol=1e-6)


def test_refine_rejects_mismatched_shapes(f64, rng):
    with pytest.raises(ValueError, match="differ"):
        trf_refine(Tensor(np.zeros((1, 3, 2, 4, 4))), Tensor(np.zeros((1, 3, 2, 4, 2))), make())
    with pytest.raises(ValueError):
        trf_fuse(Tensor(np.zeros((1, 3, 2, 4, 4))), Tensor(np.zeros((1, 3, 2, 2, 4))), make())


def test_zero_gates_mix_half_half(f64, rng):
    trf = make()
    f, t1 = pair(rng)
    np.testing.assert_array_equal(trf_fuse(f, t1, trf).data, 0.5 * f.data + 0.5 * t1.data)


def test_saturated_gates_recover_t1(f64, rng):
    trf = make()
    trf.lambda0.data[...] = -50.0
    trf.lambda1.data[...] = 50.0
    f, t1 = pair(rng)
    assert np.max(np.abs(trf_fuse(f, t1, trf).data - t1.data)) < 1e-8 * np.max(np.abs(t1.data))


def test_lambda0_gradient_closed_form(f64, rng):
    trf = make()
    trf.lambda0.data[...] = 0.37
    f, t1 = pair(rng)
    trf_fuse(f, t1, trf).sum().backward()
    s = 1 / (1 + np.exp(-0.37))
    assert trf.lambda0.grad[0] == pytest.approx(s * (1 - s) * f.data.sum(), rel=1e-12)
    errors = check_gradients(lambda: trf_fuse(f, t1, trf).sum(), {"lambda0": trf.lambda0, "lambda1": trf.lambda1})
    assert max(errors.values()) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10 ** 6), l0=st.floats(-5, 5), l1=st.floats(-5, 5))
def test_fused_bounded_by_summands(seed, l0, l1):
    r = np.random.default_rng(seed)
    with default_dtype(np.float64):
        trf = make(seed=seed)
        trf.lambda0.data[...] = l0
        trf.lambda1.data[...] = l1
        f, t1 = pair(r)
        out = trf_fuse(f, t1, trf).data
    assert np.all(np.abs(out) <= np.abs(f.data) + np.abs(t1.data))


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_swapping_timepoints_changes_output(seed):
    with default_dtype(np.float64):
        trf = make(seed=seed)
        t0, t1 = pair(np.random.default_rng(seed))
        assert not np.allclose(trf(t0, t1).data, trf(t1, t0).data)


def test_full_trf_gradient_check():
    for name in ("trf_refine", "trf"):
        assert run_check(name, MODULE_CHECKS["trf"][name], [0, 1, 2]).passed
