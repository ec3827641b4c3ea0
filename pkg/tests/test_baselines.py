import math
from fractions import Fraction

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from stochnewton.baselines import FedAcParams, fedac, fedac_params, local_sgd, minibatch_sgd
from stochnewton.dataio import Dataset, IndexStream, spawn_streams
from stochnewton.errors import DivergenceError
from stochnewton.glm import GlmProblem, newton_reference


class TestFedAcParams:
    def test_variant_one(self):
        p = fedac_params("I", 0.01, 0.1, 10)
        assert p.gamma == pytest.approx(0.1, abs=1e-9)
        assert p.alpha == pytest.approx(100.0, abs=1e-9)
        assert p.beta == pytest.approx(101.0, abs=1e-9)
        assert p.lam == 0.1

    def test_variant_two(self):
        p = fedac_params("II", 0.01, 0.1, 10)
        assert p.alpha == pytest.approx(149.5, abs=1e-9)
        assert p.beta == pytest.approx(float(Fraction(89399, 297)), abs=1e-9)

    def test_tie_at_boundary(self):
        lam, K = 0.5, 8
        eta = 1 / (lam * K)
        assert fedac_params("I", eta, lam, K).gamma == eta

    def test_names_and_modes(self):
        assert fedac_params("fedac1", 0.01, 0.1, 10) == fedac_params(1, 0.01, 0.1, 10)
        assert fedac_params("2", 0.01, 0.1, 10, internal=False).lam == 0.0
        with pytest.raises(ValueError):
            fedac_params("III", 0.01, 0.1, 10)

    def test_zero_lambda_needs_explicit_params(self):
        with pytest.raises(ValueError, match="FedAcParams"):
            fedac_params("I", 0.01, 0.0, 10)
        with pytest.raises(ValueError):
            FedAcParams(alpha=0.0, beta=1.0, eta=0.1, gamma=0.1)


def one_sample_problem(mu=0.3):
    return GlmProblem(Dataset.from_dense([[1.5]], [1]), mu=mu)


class TestFedAc:
    def test_single_machine_recursion(self, small_problem):
        params = fedac_params("II", 0.05, 0.01, 5)
        rec = fedac(np.zeros(5), small_problem, params, 1, 5, 4, seed=3)
        (stream,) = spawn_streams(small_problem.count, 3, (), 1)
        x = x_ag = np.zeros((1, 5))
        a_inv, b_inv = 1 / params.alpha, 1 / params.beta
        for _ in range(20):
            md = b_inv * x + (1 - b_inv) * x_ag
            g = small_problem.batch_gradients(md, [stream.draw()]) + params.lam * md
            x_ag = md - params.eta * g
            x = (1 - a_inv) * x + a_inv * md - params.gamma * g
        assert_array_equal(rec.x_final, x_ag[0])

    def test_scalar_hand_recursion(self):
        p = one_sample_problem()
        params = fedac_params("I", 0.2, 0.1, 3)
        rec = fedac(np.array([0.7]), p, params, 2, 3, 5, seed=0)
        x = x_ag = 0.7
        for _ in range(15):
            md = x / params.beta + (1 - 1 / params.beta) * x_ag
            g = -1.5 / (1 + math.exp(1.5 * md)) + 0.3 * md + params.lam * md
            x_ag = md - params.eta * g
            x = (1 - 1 / params.alpha) * x + md / params.alpha - params.gamma * g
        assert rec.x_final[0] == pytest.approx(x_ag, abs=1e-12)

    def test_fixed_point(self):
        p = one_sample_problem()
        x_star = newton_reference(p).x
        params = fedac_params("I", 0.1, 0.3, 4, internal=False)
        rec = fedac(x_star, p, params, 3, 4, 6, seed=0)
        assert_allclose(rec.x_final, x_star, atol=1e-12)

    def test_ledger_and_trajectory(self, small_problem):
        rec = fedac(np.zeros(5), small_problem, fedac_params("I", 0.05, 0.01, 4), 3, 4, 5, seed=0)
        assert rec.oracle_calls == 60 and len(rec.trajectory) == 6


class TestLocalSgd:
    def test_single_machine_is_sequential_sgd(self, small_problem):
        rec = local_sgd(np.zeros(5), small_problem, 0.2, 0.0, 1, 6, 5, seed=8)
        (stream,) = spawn_streams(small_problem.count, 8, (), 1)
        x = np.zeros(5)
        for _ in range(30):
            x = x - 0.2 * small_problem.stochastic_gradient(x, stream).vector
        assert_array_equal(rec.x_final, x)

    def test_K1_matches_minibatch(self, small_problem):
        a = local_sgd(np.zeros(5), small_problem, 0.3, 0.0, 7, 1, 6, seed=2)
        b = minibatch_sgd(np.zeros(5), small_problem, 0.3, 0.0, 7, 1, 6, seed=2)
        assert_array_equal(a.x_final, b.x_final)
        assert a.trajectory == b.trajectory

    def test_zero_stepsize(self, small_problem):
        x0 = np.linspace(-1, 1, 5)
        rec = local_sgd(x0, small_problem, 0.0, 0.7, 3, 4, 3, seed=0)
        assert_array_equal(rec.x_final, x0)

    def test_beta_zero_is_momentum_free(self, small_problem):
        rec = local_sgd(np.zeros(5), small_problem, 0.2, 0.0, 4, 5, 3, seed=1)
        streams = spawn_streams(small_problem.count, 1, (), 4)
        x = np.zeros(5)
        for _ in range(3):
            idx = np.stack([s.draw_many(5) for s in streams])
            X = np.tile(x, (4, 1))
            for k in range(5):
                X = X - 0.2 * small_problem.batch_gradients(X, idx[:, k])
            x = np.sort(X, axis=0).sum(axis=0) / 4
        assert_array_equal(rec.x_final, x)

    def test_momentum_restarts_each_round(self, small_problem):
        rec = local_sgd(np.zeros(5), small_problem, 0.2, 0.5, 1, 3, 2, seed=1)
        (stream,) = spawn_streams(small_problem.count, 1, (), 1)
        x = np.zeros(5)
        for _ in range(2):
            prev = cur = x[None, :]
            for k in range(3):
                g = small_problem.batch_gradients(cur, [stream.draw()])
                nxt = cur - 0.2 * g
                if k > 0:
                    nxt = nxt + 0.5 * (cur - prev)
                prev, cur = cur, nxt
            x = cur[0]
        assert_array_equal(rec.x_final, x)

    def test_divergence(self, small_problem):
        with pytest.raises(DivergenceError):
            local_sgd(np.zeros(5), small_problem, 1e6, 0.9, 2, 50, 50, seed=0)


class TestMinibatch:
    def test_plain_sgd(self, small_problem):
        rec = minibatch_sgd(np.zeros(5), small_problem, 0.4, 0.0, 1, 1, 12, seed=5)
        (stream,) = spawn_streams(small_problem.count, 5, (), 1)
        x = np.zeros(5)
        for _ in range(12):
            x = x - 0.4 * small_problem.stochastic_gradient(x, stream).vector
        assert_array_equal(rec.x_final, x)

    def test_full_batch_is_gradient_descent(self, small_problem):
        n, R = small_problem.count, 5
        gen = np.random.default_rng(0)
        stream = IndexStream(n, gen, order=np.tile(np.arange(n), R))
        rec = minibatch_sgd(np.zeros(5), small_problem, 0.5, 0.0, 1, n, R, streams=[stream])
        x = np.zeros(5)
        for _ in range(R):
            x = x - 0.5 * small_problem.full_gradient(x)
        assert_allclose(rec.x_final, x, rtol=1e-13, atol=1e-15)

    def test_frozen_with_zero_eta(self, small_problem):
        x0 = np.full(5, 0.2)
        rec = minibatch_sgd(x0, small_problem, 0.0, 0.9, 3, 2, 7, seed=0)
        assert_array_equal(rec.x_final, x0)

    def test_heavy_ball_across_rounds(self, small_problem):
        rec = minibatch_sgd(np.zeros(5), small_problem, 0.3, 0.6, 2, 3, 4, seed=6)
        streams = spawn_streams(small_problem.count, 6, (), 2)
        x_prev = x = np.zeros(5)
        for r in range(4):
            idx = np.stack([s.draw_many(3) for s in streams]).T.reshape(-1)
            g = small_problem.batch_gradients(x, idx).mean(axis=0)
            nxt = x - 0.3 * g + (0.6 * (x - x_prev) if r > 0 else 0.0)
            x_prev, x = x, nxt
        assert_allclose(rec.x_final, x, rtol=1e-13)


@pytest.mark.parametrize(
    "run",
    [
        lambda p, s, st: local_sgd(np.zeros(5), p, 0.2, 0.3, 5, 4, 3, seed=s, streams=st),
        lambda p, s, st: minibatch_sgd(np.zeros(5), p, 0.2, 0.3, 5, 4, 3, seed=s, streams=st),
        lambda p, s, st: fedac(np.zeros(5), p, fedac_params("I", 0.1, 0.01, 4), 5, 4, 3, seed=s, streams=st),
    ],
    ids=["local", "minibatch", "fedac"],
)
def test_homogeneity_and_ledger(small_problem, run):
    a = run(small_problem, 4, None)
    streams = spawn_streams(small_problem.count, 4, (), 5)
    b = run(small_problem, 4, [streams[i] for i in (3, 0, 4, 1, 2)])
    assert_array_equal(a.x_final, b.x_final)
    assert a.oracle_calls == 5 * 4 * 3
    assert len(a.trajectory) == 4
