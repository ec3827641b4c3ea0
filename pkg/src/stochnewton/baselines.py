"""First-order comparison methods: FedAc (I/II), Local SGD and Minibatch SGD.

All three simulate M machines in lock-step, draw one sample per machine per
local step, and average with :func:`machine_average` at communication points.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from ._util import guard, machine_average
from .dataio import IndexStream, spawn_streams
from .glm import GlmProblem
from .records import RunRecord


@dataclass(frozen=True)
class FedAcParams:
    alpha: float
    beta: float
    eta: float
    gamma: float
    lam: float = 0.0  # internal regularisation added to the oracle

    def __post_init__(self):
        if self.alpha == 0 or self.beta == 0:
            raise ValueError("FedAc needs nonzero alpha and beta")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.lam < 0:
            raise ValueError("internal lambda must be nonnegative")


def fedac_params(variant, eta: float, lam: float, K: int, *, internal: bool = True) -> FedAcParams:
    """Closed-form (alpha, beta, gamma) for FedAc-I or FedAc-II.

    ``lam`` is the strong-convexity estimate used in the formulas. With
    ``internal=True`` it is also added to the oracle as lam * x; with
    ``internal=False`` (explicitly regularised objective) the oracle is left alone.
    """
    variant = str(variant).upper().removeprefix("FEDAC").strip("-_ ")
    if variant in ("1",):
        variant = "I"
    elif variant in ("2",):
        variant = "II"
    if variant not in ("I", "II"):
        raise ValueError(f"unknown FedAc variant {variant!r}")
    if not eta > 0:
        raise ValueError("eta must be positive")
    if K < 1:
        raise ValueError("K must be >= 1")
    if not lam > 0:
        raise ValueError(
            "the FedAc formulas need lambda > 0; construct FedAcParams directly for explicit"
            " (alpha, beta, gamma)"
        )
    gamma = max(math.sqrt(eta / (lam * K)), eta)
    if variant == "I":
        alpha = 1.0 / (gamma * lam)
        beta = alpha + 1.0
    else:
        alpha = 1.5 / (gamma * lam) - 0.5
        beta = (2 * alpha**2 - 1) / (alpha - 1)
    return FedAcParams(alpha, beta, eta, gamma, lam if internal else 0.0)


def _setup(problem, x0, M, K, R, seed, key, streams, replace, monitor):
    if M < 1 or K < 1 or R < 0:
        raise ValueError("need M >= 1, K >= 1, R >= 0")
    if streams is None:
        streams = spawn_streams(problem.count, seed, key, M, replace=replace)
    if len(streams) != M:
        raise ValueError(f"need {M} streams, got {len(streams)}")
    x = problem._vec(x0).astype(np.float64, copy=True)
    return streams, x, monitor or problem.loss


def _draw_round(streams, K) -> np.ndarray:
    return np.stack([s.draw_many(K) for s in streams])


def fedac(
    x0,
    problem: GlmProblem,
    params: FedAcParams,
    M: int,
    K: int,
    R: int,
    seed: int = 0,
    *,
    key: tuple = (),
    streams: Sequence[IndexStream] | None = None,
    replace: bool = True,
    monitor: Callable[[np.ndarray], float] | None = None,
) -> RunRecord:
    streams, x, monitor = _setup(problem, x0, M, K, R, seed, key, streams, replace, monitor)
    start = time.perf_counter()
    a_inv = 1.0 / params.alpha
    b_inv = 1.0 / params.beta
    eta, gamma, lam = params.eta, params.gamma, params.lam
    X = np.tile(x, (M, 1))
    XAG = X.copy()
    x_ag = x
    traj = [monitor(x)]
    for r in range(R):
        idx = _draw_round(streams, K)
        for k in range(K):
            XMD = b_inv * X + (1.0 - b_inv) * XAG
            G = problem.batch_gradients(XMD, idx[:, k])
            if lam:
                G = G + lam * XMD
            XAG = XMD - eta * G
            X = (1.0 - a_inv) * X + a_inv * XMD - gamma * G
            guard(X, r * K + k + 1, "FedAc iterate")
        # the step with (t + 1) mod K == 0 closes the round
        x_ag = machine_average(XAG)
        X = np.tile(machine_average(X), (M, 1))
        XAG = np.tile(x_ag, (M, 1))
        traj.append(monitor(x_ag))
    return RunRecord(
        alg="fedac",
        config={**asdict(params), "M": M, "K": K, "R": R},
        seed=seed,
        trajectory=traj,
        rounds_at=list(range(R + 1)),
        oracle_calls=M * K * R,
        x_final=x_ag,
        wall_time=time.perf_counter() - start,
    )


def local_sgd(
    x0,
    problem: GlmProblem,
    eta: float,
    beta: float,
    M: int,
    K: int,
    R: int,
    seed: int = 0,
    *,
    key: tuple = (),
    streams: Sequence[IndexStream] | None = None,
    replace: bool = True,
    monitor: Callable[[np.ndarray], float] | None = None,
) -> RunRecord:
    """R rounds of K heavy-ball SGD steps per machine, averaging after each round.

    Momentum restarts every round (no previous iterate at k = 0).
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    streams, x, monitor = _setup(problem, x0, M, K, R, seed, key, streams, replace, monitor)
    start = time.perf_counter()
    traj = [monitor(x)]
    for r in range(R):
        idx = _draw_round(streams, K)
        X = np.tile(x, (M, 1))
        X_prev = X
        for k in range(K):
            X_next = X - eta * problem.batch_gradients(X, idx[:, k])
            if beta and k > 0:
                X_next = X_next + beta * (X - X_prev)
            guard(X_next, r * K + k + 1, "local SGD iterate")
            X_prev, X = X, X_next
        x = machine_average(X)
        traj.append(monitor(x))
    return RunRecord(
        alg="local-sgd",
        config={"eta": eta, "beta": beta, "M": M, "K": K, "R": R},
        seed=seed,
        trajectory=traj,
        rounds_at=list(range(R + 1)),
        oracle_calls=M * K * R,
        x_final=x,
        wall_time=time.perf_counter() - start,
    )


def minibatch_sgd(
    x0,
    problem: GlmProblem,
    eta: float,
    beta: float,
    M: int,
    K: int,
    R: int,
    seed: int = 0,
    *,
    key: tuple = (),
    streams: Sequence[IndexStream] | None = None,
    replace: bool = True,
    monitor: Callable[[np.ndarray], float] | None = None,
) -> RunRecord:
    """R heavy-ball steps, each on the mean of M*K gradients taken at the current point.

    The step is formed as the mean of the M*K single-sample steps x - eta*g,
    which equals x - eta * mean(g) and makes K = 1 match local SGD bit for bit.
    """
    if eta < 0:
        raise ValueError("eta must be nonnegative")
    streams, x, monitor = _setup(problem, x0, M, K, R, seed, key, streams, replace, monitor)
    start = time.perf_counter()
    traj = [monitor(x)]
    x_prev = x
    for r in range(R):
        idx = _draw_round(streams, K).T.reshape(-1)  # step-major, machine-minor
        G = problem.batch_gradients(x, idx)
        x_next = machine_average(x - eta * G)
        if beta and r > 0:
            x_next = x_next + beta * (x - x_prev)
        guard(x_next[None, :], r + 1, "minibatch SGD iterate")
        x_prev, x = x, x_next
        traj.append(monitor(x))
    return RunRecord(
        alg="minibatch-sgd",
        config={"eta": eta, "beta": beta, "M": M, "K": K, "R": R},
        seed=seed,
        trajectory=traj,
        rounds_at=list(range(R + 1)),
        oracle_calls=M * K * R,
        x_final=x,
        wall_time=time.perf_counter() - start,
    )
