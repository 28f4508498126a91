import math

import numpy as np
import pytest

from csfnet.optim import Adam, adam_step
from csfnet.tensor import Parameter, default_dtype


def param(values):
    with default_dtype(np.float64):
        return Parameter(np.array(values, dtype=np.float64))


def scalar_adam(theta, grads, lr, b1, b2, eps):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta -= lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return theta


def test_zero_gradient_is_exact_noop():
    p = param([0.3, -1.7, 2.0])
    before = p.data.copy()
    p.grad = np.zeros(3)
    adam_step([p], lr=1e-2)
    np.testing.assert_array_equal(p.data, before)
    assert p.step_count == 1


@pytest.mark.parametrize("g", [1e-6, 0.5, 30.0, -4.0])
def test_first_step_magnitude_is_lr(g):
    p = param([1.0])
    p.grad = np.array([g])
    adam_step([p], lr=1e-3, beta1=0.5, beta2=0.999, eps=1e-8)
    step = 1.0 - p.data[0]
    assert step == pytest.approx(math.copysign(1e-3 * abs(g) / (abs(g) + 1e-8), g), rel=1e-9)


def test_two_steps_match_scalar_recurrence():
    p = param([0.25])
    grads = [0.7, 0.7]
    for g in grads:
        p.grad = np.array([g])
        adam_step([p], lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8)
    assert abs(p.data[0] - scalar_adam(0.25, grads, 1e-4, 0.5, 0.999, 1e-8)) < 1e-10
    assert p.step_count == 2


def test_missing_gradient_rejected():
    with pytest.raises(ValueError, match="no gradient"):
        adam_step([param([1.0])], lr=1e-3)


def test_schedule_halves_every_step_epochs():
    opt = Adam([param([1.0])], lr=1e-4, lr_step=20, lr_decay=0.5)
    lrs = []
    for epoch in (0, 19, 20, 39, 40):
        opt.set_epoch(epoch)
        lrs.append(opt.lr)
    assert lrs == pytest.approx([1e-4, 1e-4, 5e-5, 5e-5, 2.5e-5])


def test_optimizer_skips_params_without_grad():
    a, b = param([1.0]), param([1.0])
    a.grad = np.array([1.0])
    opt = Adam([a, b], lr=1e-3)
    opt.step()
    assert a.step_count == 1 and b.step_count == 0 and b.data[0] == 1.0
    opt.zero_grad()
    assert a.grad is None
