"""Learning-rate schedule and Adam update behavior."""
import numpy as np
import pytest

from seqco.errors import ConfigError, NumericalError
from seqco.optim import Adam, ScheduleConfig, lr_at
from seqco.tensor import Tensor


class TestSchedule:
    def test_zero_at_start(self):
        cfg = ScheduleConfig(peak_lr=3e-4, warmup_steps=100, total_steps=1000)
        assert lr_at(0, cfg) == 0.0

    def test_peak_at_warmup(self):
        cfg = ScheduleConfig(peak_lr=3e-4, warmup_steps=100, total_steps=1000)
        assert lr_at(100, cfg) == pytest.approx(3e-4)

    def test_interpolated_decay_value(self):
        cfg = ScheduleConfig(peak_lr=4e-5, warmup_steps=1000, total_steps=20000)
        assert lr_at(10500, cfg) == pytest.approx(4e-5 * 9500 / 19000)
        assert lr_at(10500, cfg) == pytest.approx(2e-5)

    def test_zero_beyond_total(self):
        cfg = ScheduleConfig(peak_lr=1e-3, warmup_steps=10, total_steps=100)
        assert lr_at(101, cfg) == 0.0
        assert lr_at(100, cfg) == 0.0

    def test_piecewise_linear_and_peak_unique(self):
        cfg = ScheduleConfig(peak_lr=1e-3, warmup_steps=10, total_steps=50)
        values = [lr_at(s, cfg) for s in range(51)]
        assert max(values) == values[10] == pytest.approx(1e-3)
        up = np.diff(values[: 10 + 1])
        down = np.diff(values[10:])
        assert np.allclose(up, up[0]) and np.allclose(down, down[0])

    def test_continuity_at_warmup(self):
        cfg = ScheduleConfig(peak_lr=7e-4, warmup_steps=13, total_steps=101)
        assert abs(lr_at(13, cfg) - lr_at(12, cfg)) < 1e-4
        assert abs(lr_at(14, cfg) - lr_at(13, cfg)) < 1e-4

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigError):
            ScheduleConfig(peak_lr=1e-3, warmup_steps=10, total_steps=10)
        with pytest.raises(ConfigError):
            ScheduleConfig(peak_lr=0.0, warmup_steps=1, total_steps=10)
        cfg = ScheduleConfig(peak_lr=1e-3, warmup_steps=1, total_steps=10)
        with pytest.raises(ConfigError):
            lr_at(-1, cfg)


class TestAdam:
    def test_zero_gradient_leaves_parameters(self):
        p = Tensor(np.array([1.0, 2.0], dtype=np.float32), requires_grad=True)
        p.grad = np.zeros(2, dtype=np.float32)
        before = p.data.copy()
        Adam({"p": p}).step(0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_missing_gradient_skips_parameter(self):
        p = Tensor(np.ones(2, dtype=np.float32), requires_grad=True)
        Adam({"p": p}).step(0.1)
        np.testing.assert_array_equal(p.data, np.ones(2))

    def test_first_step_hand_value(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        p.grad = np.array([1.0])
        Adam({"p": p}, grad_clip=None).step(0.1)
        assert p.data[0] == pytest.approx(-0.1, rel=1e-6)

    def test_two_runs_bit_identical(self):
        def run():
            rng = np.random.default_rng(7)
            p = Tensor(rng.normal(size=8), requires_grad=True)
            adam = Adam({"p": p}, grad_clip=1.0)
            for step in range(20):
                p.grad = rng.normal(size=8)
                adam.step(1e-2)
            return p.data.tobytes()

        assert run() == run()

    def test_nan_gradient_aborts(self):
        p = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.array([np.nan, 0.0])
        adam = Adam({"p": p})
        before = p.data.copy()
        with pytest.raises(NumericalError):
            adam.step(0.1)
        np.testing.assert_array_equal(p.data, before)

    def test_gradients_cleared_after_step(self):
        p = Tensor(np.ones(2), requires_grad=True)
        p.grad = np.ones(2)
        Adam({"p": p}).step(0.1)
        assert p.grad is None

    def test_clipping_scales_large_gradients(self):
        p = Tensor(np.zeros(4), requires_grad=True)
        p.grad = np.full(4, 100.0)
        norm = Adam({"p": p}, grad_clip=1.0).step(1.0)
        assert norm == pytest.approx(200.0)
        # post-clip effective gradient has unit norm; first Adam step is -lr regardless,
        # so verify via the stored moments instead
        adam = Adam({"q": Tensor(np.zeros(4), requires_grad=True)}, grad_clip=1.0)
        q = adam.params["q"]
        q.grad = np.full(4, 100.0)
        adam.step(1.0)
        np.testing.assert_allclose(adam.m["q"], 0.1 * np.full(4, 0.5), rtol=1e-6)

    def test_hook_runs_after_parameter_update(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        seen = []

        def hook():
            seen.append(p.data.copy())

        adam = Adam({"p": p}, grad_clip=None, post_step=hook)
        p.grad = np.array([1.0])
        adam.step(0.1)
        assert len(seen) == 1
        assert seen[0][0] == pytest.approx(-0.1, rel=1e-6)  # already moved when hook fired
