import numpy as np
import pytest

from decgp.optimizer import AdamState, StepSchedule, adam_step, grow_state, schedule_rate


class TestSchedule:
    def test_initial_rate(self):
        assert schedule_rate(StepSchedule(0.05), 0) == pytest.approx(0.05)

    def test_halved_at_t_100(self):
        assert schedule_rate(StepSchedule(0.3), 100) == pytest.approx(0.15)

    def test_third_at_t_400(self):
        assert schedule_rate(StepSchedule(0.3), 400) == pytest.approx(0.1)

    def test_strictly_decreasing(self):
        s = StepSchedule(1.0)
        rates = [schedule_rate(s, t) for t in range(0, 200)]
        assert all(r1 > r2 for r1, r2 in zip(rates, rates[1:]))

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            StepSchedule(0.0)
        with pytest.raises(ValueError):
            schedule_rate(StepSchedule(1.0), -1)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        params = {"w": np.array([1.0, -2.0]), "b": 0.5}
        state = AdamState.init(params)
        out, state = adam_step(state, params, {"w": np.zeros(2), "b": 0.0}, 0.1)
        assert np.array_equal(out["w"], params["w"])
        assert out["b"] == params["b"]
        assert state.step_count == 1

    def test_first_step_moves_by_rate_times_sign(self):
        g = 0.37
        params = {"x": 0.0}
        state = AdamState.init(params)
        out, state = adam_step(state, params, {"x": g}, rate=0.01)
        expected = 0.01 * g / (abs(g) + state.epsilon)
        assert abs(out["x"] - expected) <= 1e-6 * 0.01

    def test_two_steps_match_hand_recurrence(self):
        beta1, beta2, eps, rate = 0.9, 0.999, 1e-8, 0.05
        gs = [0.8, -0.3]
        x, m, v = 1.0, 0.0, 0.0
        for t, g in enumerate(gs, start=1):
            m = beta1 * m + (1 - beta1) * g
            v = beta2 * v + (1 - beta2) * g * g
            x = x + rate * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)

        params = {"x": 1.0}
        state = AdamState.init(params)
        for g in gs:
            params, state = adam_step(state, params, {"x": g}, rate)
        assert params["x"] == pytest.approx(x, rel=1e-12)
        assert state.step_count == 2

    def test_shape_mismatch_rejected(self):
        params = {"w": np.zeros(3)}
        state = AdamState.init(params)
        with pytest.raises(ValueError):
            adam_step(state, params, {"w": np.zeros(4)}, 0.1)

    def test_nonfinite_gradient_rejected_without_touching_state(self):
        params = {"w": np.zeros(2)}
        state = AdamState.init(params)
        with pytest.raises(ValueError):
            adam_step(state, params, {"w": np.array([1.0, np.nan])}, 0.1)
        assert state.step_count == 0
        assert np.array_equal(state.first_moment["w"], np.zeros(2))

    def test_deterministic_trajectories(self):
        rng = np.random.default_rng(0)
        grads = [{"w": rng.normal(size=4)} for _ in range(20)]

        def trajectory():
            params = {"w": np.ones(4)}
            state = AdamState.init(params)
            for i, g in enumerate(grads, start=1):
                params, state = adam_step(state, params, g, 0.1 / i)
            return params["w"]

        assert np.array_equal(trajectory(), trajectory())

    def test_grow_state_pads_with_zeros(self):
        params = {"w": np.ones(2)}
        state = AdamState.init(params)
        params, state = adam_step(state, params, {"w": np.ones(2)}, 0.1)
        bigger = {"w": np.ones(4)}
        grow_state(state, bigger)
        assert state.first_moment["w"].shape == (4,)
        assert np.allclose(state.first_moment["w"][2:], 0.0)
        assert not np.allclose(state.first_moment["w"][:2], 0.0)

    def test_ascent_on_negative_quadratic_shrinks_the_iterate(self):
        # f(a) = -a^T K a / 2 with K spd; ascent steps should drive a to 0
        rng = np.random.default_rng(1)
        Q = rng.normal(size=(3, 3))
        K = Q @ Q.T + 0.5 * np.eye(3)
        start = 4.0 * rng.normal(size=3)
        params = {"a": start.copy()}
        state = AdamState.init(params)
        schedule = StepSchedule(0.02)
        norms = []
        for t in range(1, 501):
            grad = {"a": -K @ params["a"]}
            params, state = adam_step(state, params, grad, schedule_rate(schedule, t))
            norms.append(np.linalg.norm(params["a"]))
        checkpoints = norms[99::25]
        assert all(n1 >= n2 - 1e-9 for n1, n2 in zip(checkpoints, checkpoints[1:]))
        assert norms[-1] < 0.5 * np.linalg.norm(start)
