import numpy as np
import pytest

from csfnet import tensor as T
from csfnet.gradcheck import MODULE_CHECKS, OP_CHECKS, check_gradients, format_report, run_suite
from csfnet.tensor import Tensor


def test_all_ops_registered():
    expected = {"add", "mul", "neg", "relu", "sigmoid", "softmax", "concat", "reshape", "transpose", "sum",
                "mean", "max", "matmul", "linear", "conv3d", "pool3d_avg", "pool3d_max", "upsample3d",
                "cross_entropy", "diamond"}
    assert expected <= set(OP_CHECKS)
    assert set(MODULE_CHECKS) == {"conv", "cbam", "trf", "cmaf"}
    assert {"cbam", "extract"} <= set(MODULE_CHECKS["cbam"])
    assert {"trf_refine", "trf"} <= set(MODULE_CHECKS["trf"])
    assert {"cross_attention", "classify", "full_network"} <= set(MODULE_CHECKS["cmaf"])


def test_requires_float64():
    x = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        check_gradients(lambda: x.sum(), {"x": x})


def test_conv_suite_passes():
    results = run_suite("conv", seed=0, n_seeds=2)
    assert all(r.passed for r in results), format_report(results)


def test_corrupted_backward_is_named(monkeypatch):
    original = T.Sigmoid.backward
    monkeypatch.setattr(T.Sigmoid, "backward", lambda self, grad: tuple(1.1 * g for g in original(self, grad)))
    results = run_suite("conv", seed=0, n_seeds=1)
    failed = {r.name for r in results if not r.passed}
    assert "sigmoid" in failed
    assert "relu" not in failed and "conv3d" not in failed


def test_report_lists_worst_error_per_module():
    report = format_report(run_suite("trf", n_seeds=1))
    assert "worst trf:" in report
    assert "trf_refine" in report and "PASS" in report


def test_unknown_module_rejected():
    with pytest.raises(ValueError):
        run_suite("bogus")
