import numpy as np
import pytest

from taem.autodiff import Tensor
from taem.optim import AdamW


def make_param(value):
    p = Tensor(np.array([value], dtype=np.float64), requires_grad=True)
    return {"p": p}


def test_zero_grad_zero_decay_is_noop():
    params = make_param(1.5)
    opt = AdamW(params, lr=0.1, weight_decay=0.0)
    params["p"].grad = np.zeros(1)
    for _ in range(5):
        opt.step()
    np.testing.assert_allclose(params["p"].data, [1.5])


def test_first_step_bias_corrected_update():
    # m_hat = v_hat = 1 after one step with grad 1, so p -= lr / (1 + eps).
    params = make_param(1.0)
    opt = AdamW(params, lr=0.1, beta1=0.9, beta2=0.98, eps=1e-8)
    params["p"].grad = np.ones(1)
    opt.step()
    expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8))
    np.testing.assert_allclose(params["p"].data, [expected], rtol=1e-12)
    assert params["p"].data[0] == pytest.approx(0.9, abs=1e-8)


def test_decoupled_weight_decay():
    # grad 0: the only movement is p -= lr * wd * p.
    params = make_param(1.0)
    opt = AdamW(params, lr=0.1, weight_decay=0.1)
    params["p"].grad = np.zeros(1)
    opt.step()
    np.testing.assert_allclose(params["p"].data, [0.99], rtol=1e-12)


def test_lr_must_be_positive():
    with pytest.raises(ValueError):
        AdamW(make_param(1.0), lr=0.0)
    with pytest.raises(ValueError):
        AdamW(make_param(1.0), lr=-1e-3)


def test_missing_grad_treated_as_zero():
    params = make_param(2.0)
    opt = AdamW(params, lr=0.5)
    opt.step()
    np.testing.assert_allclose(params["p"].data, [2.0])


def test_moments_match_reference_formula():
    rng = np.random.default_rng(0)
    value = rng.standard_normal(4)
    grads = [rng.standard_normal(4) for _ in range(3)]
    p = Tensor(value.copy(), requires_grad=True)
    opt = AdamW({"p": p}, lr=1e-2, beta1=0.9, beta2=0.98, eps=1e-8, weight_decay=0.04)

    # independent reference implementation
    ref = value.copy()
    m = np.zeros(4)
    v = np.zeros(4)
    for t, g in enumerate(grads, 1):
        m = 0.9 * m + 0.1 * g
        v = 0.98 * v + 0.02 * g * g
        ref = ref - 1e-2 * 0.04 * ref
        ref = ref - 1e-2 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.98**t)) + 1e-8)

        p.grad = g
        opt.step()
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)
