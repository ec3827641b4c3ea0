import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from stochnewton.dataio import Dataset, aux_stream, spawn_streams
from stochnewton.fedsnlite import LiteConfig, damping, fedsn_lite
from stochnewton.glm import GlmProblem
from stochnewton.quadcore import OracleCase, QuadSubproblem


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(nu=0.0), dict(eta=0.0), dict(K=0), dict(M=0), dict(T=-1)])
    def test_invalid(self, kw):
        base = dict(T=2, eta=0.1, K=3, M=2)
        with pytest.raises(ValueError):
            LiteConfig(**{**base, **kw})

    def test_default_nu(self):
        assert LiteConfig(T=1, eta=0.1, K=1, M=1).nu == 1.25


class TestDamping:
    def test_values(self):
        assert damping(1.25, 0.0) == 1.25
        assert damping(1.0, 4.0) == pytest.approx(1 / 3)
        assert damping(1.0, -1e-18) == 1.0

    @pytest.mark.parametrize("s", [0.0, 1e-8, 0.3, 10.0, 1e12])
    def test_range(self, s):
        assert 0 < damping(1.25, s) <= 1.25


class TestRun:
    def test_zero_step(self):
        d = Dataset.from_dense(np.zeros((4, 3)), [1, -1, 1, -1])
        p = GlmProblem(d)
        rec = fedsn_lite(np.zeros(3), p, LiteConfig(T=3, eta=0.5, K=4, M=2), seed=0)
        assert_array_equal(rec.x_final, 0.0)
        assert rec.extra["nu_t"] == [1.25] * 3

    def test_exact_oracle_takes_damped_newton_step(self):
        # one sample: every oracle is exact, and long SGD on Q0 reaches the Newton step
        p = GlmProblem(Dataset.from_dense([[0.8, -0.5]], [1]), mu=0.5)
        x0 = np.array([0.4, 0.1])
        H = p.hessian(x0)
        newton = -np.linalg.solve(H, p.full_gradient(x0))
        K = 4000
        rec = fedsn_lite(x0, p, LiteConfig(T=1, eta=0.5, K=K, M=1, nu=1.0), seed=0)
        # uniform averaging of a geometrically converging sequence leaves an O(1/K) bias
        step = rec.x_final - x0
        s = newton @ H @ newton
        expected = newton / (1 + math.sqrt(s))
        assert_allclose(step, expected, rtol=5e-3)

    def test_matches_plain_sgd_reference(self, small_problem):
        cfg = LiteConfig(T=3, eta=0.3, K=7, M=1, nu=1.25, beta=0.0)
        rec = fedsn_lite(np.zeros(5), small_problem, cfg, seed=4, key=(2,))
        (stream,) = spawn_streams(small_problem.count, 4, (2,), 1)
        aux = aux_stream(small_problem.count, 4, (2,))
        x = np.zeros(5)
        for _ in range(3):
            sub = QuadSubproblem(small_problem, x, oracle_case=OracleCase.SAME_SAMPLE)
            u = np.zeros((1, 5))
            acc = np.zeros((1, 5))
            for _ in range(7):
                z = np.array([stream.draw()])
                u = u - 0.3 * sub.gamma(u, z, z)
                acc += (1 / 7) * u
            step = acc[0]
            z = aux.draw()
            s = float(step @ small_problem.batch_hvps(x, step, [z])[0])
            x = x + 1.25 / (1 + math.sqrt(max(s, 0.0))) * step
        assert_array_equal(rec.x_final, x)

    def test_ledgers(self, small_problem):
        cfg = LiteConfig(T=10, eta=0.3, K=10, M=4, beta=0.5)
        rec = fedsn_lite(np.zeros(5), small_problem, cfg, seed=1)
        assert rec.rounds == 10 and len(rec.trajectory) == 11
        assert rec.oracle_calls == 4 * 10 * 10 + 10
        assert all(0 < v <= 1.25 for v in rec.extra["nu_t"])
        assert rec.best <= rec.trajectory[0]

    def test_permutation_invariance(self, small_problem):
        cfg = LiteConfig(T=4, eta=0.3, K=5, M=6, beta=0.3)
        a = fedsn_lite(np.zeros(5), small_problem, cfg, seed=2)
        streams = spawn_streams(small_problem.count, 2, (), 6)
        b = fedsn_lite(np.zeros(5), small_problem, cfg, seed=2, streams=streams[::-1])
        assert_array_equal(a.x_final, b.x_final)
