import numpy as np
import pytest

from echobeam.autodiff.optim import OptimizerState, adam_step, momentum_decay_step
from echobeam.errors import NumericalError


def test_zero_gradient_leaves_params(rng):
    p = rng.standard_normal((3, 4))
    before = p.copy()
    st = OptimizerState.adam([p])
    for _ in range(5):
        adam_step(st, [p], [np.zeros_like(p)])
    assert np.array_equal(p, before)
    ms = OptimizerState.momentum_decay([p])
    momentum_decay_step(ms, [p], [np.zeros_like(p)], 0)
    assert np.array_equal(p, before)


def test_adam_constant_gradient_step_tends_to_lr():
    p = np.zeros(3)
    g = np.array([0.3, -2.0, 1e-3])
    st = OptimizerState.adam([p], lr=0.01)
    steps = []
    for n in range(2000):
        old = p.copy()
        adam_step(st, [p], [g], n)
        steps.append(old - p)
    # bias correction makes every step lr * sign(g) up to eps
    assert np.allclose(steps[0], 0.01 * np.sign(g), rtol=1e-4)
    assert np.allclose(steps[-1], 0.01 * np.sign(g), rtol=1e-4)


def test_adam_matches_hand_update():
    p = np.array([1.0])
    st = OptimizerState.adam([p], lr=0.1)
    adam_step(st, [p], [np.array([2.0])])
    adam_step(st, [p], [np.array([-1.0])])
    m = 0.9 * 0.1 * 2.0 + 0.1 * -1.0
    v = 0.999 * 0.001 * 4.0 + 0.001 * 1.0
    step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    step1 = 0.1 * 2.0 / (2.0 + 1e-8)
    assert p[0] == pytest.approx(1.0 - step1 - step2, rel=1e-14)


def test_momentum_schedule():
    st = OptimizerState.momentum_decay([np.zeros(1)], lr=0.005, n_half=1000)
    assert st.learning_rate(0) == 0.005
    assert st.learning_rate(1000) == pytest.approx(0.0025, rel=1e-15)
    p = np.zeros(1)
    momentum_decay_step(st, [p], [np.ones(1)], 1000)
    momentum_decay_step(st, [p], [np.ones(1)], 1001)
    assert p[0] == pytest.approx(-(0.005 / 2 + 0.005 / 2.001 * 1.9), rel=1e-14)


def test_zero_lr_freezes():
    p = np.ones(4)
    st = OptimizerState.momentum_decay([p], lr=0.0)
    momentum_decay_step(st, [p], [np.full(4, 3.0)], 0)
    assert np.array_equal(p, np.ones(4))


@pytest.mark.parametrize("bad", [np.nan, np.inf])
def test_non_finite_gradient_names_iteration(bad):
    p = np.zeros(2)
    with pytest.raises(NumericalError, match="iteration 17"):
        adam_step(OptimizerState.adam([p]), [p], [np.array([0.0, bad])], 17)
    with pytest.raises(NumericalError, match="iteration 4"):
        momentum_decay_step(OptimizerState.momentum_decay([p]), [p], [np.array([bad, 0])], 4)
    assert not p.any()


def test_float32_params_stay_float32(rng):
    p = rng.standard_normal(5).astype(np.float32)
    st = OptimizerState.adam([p])
    adam_step(st, [p], [rng.standard_normal(5).astype(np.float32)])
    assert p.dtype == np.float32
