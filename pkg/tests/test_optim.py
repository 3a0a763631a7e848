import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safelse.optim import (
    DivergenceError,
    RngStream,
    StepSchedule,
    Trajectory,
    nesterov_ascent_fixed,
    nesterov_sgd,
    sgd,
)


def noisy_quadratic(x, rng):
    return x + 0.1 * rng.normal(size=x.shape)


class TestSchedule:
    def test_inverse_sqrt(self):
        s = StepSchedule("inverse_sqrt", C=2.0)
        assert all(s(i) == 2.0 / math.sqrt(i) for i in range(1, 1001))

    def test_constant(self):
        assert StepSchedule("constant", 0.3)(17) == 0.3

    def test_invalid(self):
        with pytest.raises(ValueError):
            StepSchedule("cosine")
        with pytest.raises(ValueError):
            StepSchedule(C=0.0)


class TestRngStream:
    def test_replay(self):
        a = RngStream(7, 3).generator().random(5)
        b = RngStream(7, 3).generator().random(5)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        a = RngStream(7, 0).generator().random(5)
        b = RngStream(7, 1).generator().random(5)
        assert not np.array_equal(a, b)

    def test_pinned_first_draw(self):
        # guards the documented PCG64 + SeedSequence construction
        ss = np.random.SeedSequence(0, spawn_key=(0,))
        expected = np.random.Generator(np.random.PCG64(ss)).random()
        assert RngStream(0, 0).generator().random() == expected


class TestTrajectory:
    def test_strictly_increasing_iterations(self):
        t = Trajectory()
        t.log(0, "loss", 1.0)
        t.log(1, "loss", 0.5)
        t.log(1, "acc", 0.9)
        with pytest.raises(ValueError):
            t.log(1, "loss", 0.4)

    def test_series_and_last(self):
        t = Trajectory()
        for i in range(3):
            t.log(i, "m", float(i * i))
        its, vals = t.series("m")
        assert its.tolist() == [0, 1, 2] and vals.tolist() == [0.0, 1.0, 4.0]
        assert t.last("m") == 4.0
        assert t.metrics() == ["m"]
        with pytest.raises(KeyError):
            t.last("other")


class TestSgd:
    def test_zero_gradient(self):
        x0 = np.array([1.0, -2.0])
        out = sgd(lambda x, rng: np.zeros_like(x), x0, StepSchedule("constant", 0.1), 50,
                  np.random.default_rng(0))
        assert np.array_equal(out, x0)

    def test_quadratic_recursion(self):
        out = sgd(lambda x, rng: x, [1.0], StepSchedule("constant", 0.1), 100, np.random.default_rng(0))
        assert out[0] == pytest.approx(0.9**100, rel=1e-12)

    def test_replay(self):
        runs = []
        for _ in range(2):
            seen = []
            sgd(noisy_quadratic, np.ones(3), StepSchedule(), 50, RngStream(5).generator(),
                lambda i, x: seen.append(x.copy()))
            runs.append(np.array(seen))
        assert np.array_equal(runs[0], runs[1])

    def test_monotone_full_batch(self):
        A = np.diag([1.0, 4.0, 9.0])
        f = lambda x: 0.5 * x @ A @ x  # noqa: E731
        vals = []
        sgd(lambda x, rng: A @ x, np.ones(3), StepSchedule("constant", 1.9 / 9.0), 200,
            np.random.default_rng(0), lambda i, x: vals.append(f(x)))
        assert all(b <= a for a, b in zip(vals, vals[1:]))

    def test_divergence(self):
        with pytest.raises(DivergenceError) as info, np.errstate(over="ignore"):
            sgd(lambda x, rng: x * 1e200, [1e200], StepSchedule("constant", 1.0), 10,
                np.random.default_rng(0))
        assert info.value.iteration >= 1
        assert "divergence detected" in str(info.value)


class TestNesterov:
    def test_momentum_zero_is_sgd(self):
        a = nesterov_sgd(noisy_quadratic, np.ones(4), 0.05, 0.0, 300, RngStream(2).generator())
        b = sgd(noisy_quadratic, np.ones(4), StepSchedule("constant", 0.05), 300, RngStream(2).generator())
        assert np.array_equal(a, b)

    def test_quadratic_convergence(self):
        out = nesterov_sgd(lambda x, rng: x, [1.0], 0.01, 0.9, 2000, np.random.default_rng(0))
        # two-term linear recursion simulated independently
        x, v = 1.0, 0.0
        for _ in range(2000):
            v = 0.9 * v - 0.01 * (x + 0.9 * v)
            x = x + v
        assert abs(out[0]) < 1e-6
        assert out[0] == pytest.approx(x, rel=1e-9, abs=1e-300)

    def test_replay(self):
        a = nesterov_sgd(noisy_quadratic, np.ones(2), 0.1, 0.9, 100, RngStream(4, 1).generator())
        b = nesterov_sgd(noisy_quadratic, np.ones(2), 0.1, 0.9, 100, RngStream(4, 1).generator())
        assert np.array_equal(a, b)

    def test_bad_momentum(self):
        with pytest.raises(ValueError):
            nesterov_sgd(noisy_quadratic, [0.0], 0.1, 1.0, 1, np.random.default_rng(0))


class TestAscent:
    def test_starts_at_maximiser(self):
        a = 1.7
        z, val = nesterov_ascent_fixed(lambda z: (-0.5 * (z - a) ** 2, -(z - a)), a, 0.5)
        assert float(z) == a and float(val) == 0.0

    def test_quadratic_from_one(self):
        z, _ = nesterov_ascent_fixed(lambda z: (-0.5 * z**2, -z), 1.0, 0.5)
        assert abs(float(z)) < 0.1

    def test_linear_objective_moves_uphill(self):
        g = np.array([1.0, -2.0])

        def vg(z):
            return float(g @ z), g

        z, _ = nesterov_ascent_fixed(vg, np.zeros(2), 0.1, iters=5)
        assert np.all(np.sign(z) == np.sign(g))

    @given(st.floats(-5, 5), st.floats(0.05, 1.0), st.floats(0.1, 3.0))
    def test_never_decreases_concave(self, z0, step, curv):
        def vg(z):
            return -0.5 * curv * z**2, -curv * z

        step = min(step, 1.0 / curv)
        prev = vg(z0)[0]
        for iters in range(1, 6):
            _, val = nesterov_ascent_fixed(vg, z0, step, iters=iters)
            assert float(val) >= prev - 1e-12
            prev = float(val)

    def test_rows_are_independent(self):
        def vg(Z):
            return -0.5 * np.sum(Z * Z, axis=1), -Z

        Z0 = np.array([[1.0, 0.0], [0.0, -3.0]])
        Z, vals = nesterov_ascent_fixed(vg, Z0, 0.5)
        for k in range(2):
            zk, vk = nesterov_ascent_fixed(vg, Z0[k:k + 1], 0.5)
            assert np.allclose(Z[k], zk[0], atol=1e-15)

    def test_zero_iterations_rejected(self):
        with pytest.raises(ValueError):
            nesterov_ascent_fixed(lambda z: (0.0, 0.0), 0.0, 0.1, iters=0)
