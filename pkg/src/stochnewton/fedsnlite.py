"""Practical federated Newton variant without the regularisation search.

Each outer step solves the unregularised local quadratic once (constant
stepsize, uniform averaging), then damps the step by a one-sample Newton
decrement estimate: x <- x + nu / (1 + sqrt(s)) * step.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .dataio import IndexStream, aux_stream, spawn_streams
from .glm import GlmProblem
from .quadcore import ConstantSchedule, OracleCase, QuadSubproblem, regularized_quadratic_solver
from .records import RunRecord


@dataclass(frozen=True)
class LiteConfig:
    T: int
    eta: float
    K: int
    M: int
    nu: float = 1.25
    beta: float = 0.0

    def __post_init__(self):
        if self.T < 0:
            raise ValueError("T must be >= 0")
        if not self.nu > 0:
            raise ValueError("nu must be positive")
        if not self.eta > 0:
            raise ValueError("eta must be positive")
        if self.K < 1 or self.M < 1:
            raise ValueError("K and M must be >= 1")


def damping(nu: float, s: float) -> float:
    return nu / (1.0 + math.sqrt(max(s, 0.0)))


def fedsn_lite(
    x0,
    problem: GlmProblem,
    cfg: LiteConfig,
    seed: int,
    *,
    key: tuple = (),
    streams: Sequence[IndexStream] | None = None,
    decrement_stream: IndexStream | None = None,
    replace: bool = True,
    monitor: Callable[[np.ndarray], float] | None = None,
) -> RunRecord:
    """T outer steps, one communication round each."""
    if streams is None:
        streams = spawn_streams(problem.count, seed, key, cfg.M, replace=replace)
    if decrement_stream is None:
        decrement_stream = aux_stream(problem.count, seed, key)
    monitor = monitor or problem.loss
    sched = ConstantSchedule(cfg.eta, cfg.K)
    start = time.perf_counter()
    x = problem._vec(x0).astype(np.float64, copy=True)
    traj = [monitor(x)]
    nus = []
    for _ in range(cfg.T):
        sub = QuadSubproblem(problem, x, xi_bar=1.0, lam=0.0, oracle_case=OracleCase.SAME_SAMPLE)
        step = regularized_quadratic_solver(sub, cfg.M, cfg.K, cfg.beta, sched, streams)
        z = decrement_stream.draw()
        s = float(step @ problem.batch_hvps(x, step, [z])[0])
        nu_t = damping(cfg.nu, s)
        x = x + nu_t * step
        nus.append(nu_t)
        traj.append(monitor(x))
    return RunRecord(
        alg="fedsn-lite",
        config=asdict(cfg),
        seed=seed,
        trajectory=traj,
        rounds_at=list(range(cfg.T + 1)),
        oracle_calls=cfg.M * cfg.K * cfg.T + cfg.T,
        x_final=x,
        wall_time=time.perf_counter() - start,
        extra={"nu_t": nus},
    )
