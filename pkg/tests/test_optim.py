import numpy as np
import pytest

from subprobe.autodiff import Parameter
from subprobe.optim import AdamState, adam_step, lr_schedule


def test_first_step_closed_form():
    # with g=1 every moment is exactly 1 after bias correction
    p = Parameter(np.array([1.0]), name="p")
    p.grad = np.array([1.0])
    adam_step([p], AdamState(), lr=0.1)
    np.testing.assert_allclose(p.data, 1.0 - 0.1 / (1.0 + 1e-8), rtol=1e-15)


def test_zero_gradient_leaves_param_unchanged():
    p = Parameter(np.array([3.0, -2.0]), name="p")
    state = AdamState()
    for _ in range(5):
        p.grad = np.zeros(2)
        adam_step([p], state, lr=0.5)
    np.testing.assert_array_equal(p.data, [3.0, -2.0])


def test_identical_streams_give_bit_identical_trajectories():
    rng = np.random.default_rng(0)
    grads = [rng.normal(size=4) for _ in range(20)]
    runs = []
    for _ in range(2):
        p = Parameter(np.ones(4), name="p")
        state = AdamState()
        for g in grads:
            p.grad = g.copy()
            adam_step([p], state, lr=0.01)
        runs.append(p.data.copy())
    np.testing.assert_array_equal(runs[0], runs[1])


def test_gradients_untouched_by_step():
    p = Parameter(np.ones(3), name="p")
    p.grad = np.full(3, 0.5)
    adam_step([p], AdamState(), lr=0.1)
    np.testing.assert_array_equal(p.grad, np.full(3, 0.5))


def test_lr_schedule_warmup_shape():
    total = 1000
    assert lr_schedule(0, total, 0.2) == 0.0
    assert lr_schedule(50, total, 0.2) == pytest.approx(0.1)  # halfway through warmup
    assert lr_schedule(100, total, 0.2) == pytest.approx(0.2)
    assert lr_schedule(500, total, 0.2) == pytest.approx(0.2)
    assert lr_schedule(total, total, 0.2) == pytest.approx(0.2)


def test_lr_schedule_rejects_zero_total():
    with pytest.raises(ValueError):
        lr_schedule(0, 0, 0.1)
