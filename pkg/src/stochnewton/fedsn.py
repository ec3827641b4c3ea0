"""Federated stochastic Newton outer loop and its hyperparameter settings.

Every hyperparameter follows a closed-form rule in (M, K, R, H, B, sigma,
rho, alpha), evaluated with natural logarithms in the order
zeta -> T -> r -> xi -> lambda_min -> N -> C.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from .dataio import IndexStream, spawn_streams
from .errors import ConfigError
from .glm import GlmProblem, ProblemConstants
from .quadcore import OracleCase
from .records import RunRecord
from .trustquad import constrained_quadratic_solver, search_bound

log = logging.getLogger(__name__)

THEORY_MIN_K = 175
_LOG_51200 = math.log(51200.0)


def zeta(K: int, alpha: float, B: float) -> float:
    return 4096.0 + 4.0 * (80.0 + 32.0 * math.log(K) + 24.0 * math.log1p(2.0 * alpha * B)) ** 2


def main_iterations(R: int, z: float) -> int:
    return math.floor(R / (4.0 * z) * math.log(R / z) ** 2)


def theory_min_rounds(K: int, alpha: float, B: float) -> float:
    """Smallest R for which the convergence guarantee applies (e^2 * zeta)."""
    return math.e**2 * zeta(K, alpha, B)


def trust_radius(T: int, K: int, B: float, alpha: float) -> float:
    qsc = 1.0 / (5.0 * alpha) if alpha > 0 else math.inf
    return min(32.0 * B / T * math.log(T * K), qsc)


def regularization_terms(H, rho, sigma, M, K, r_bar) -> list[float]:
    if K <= 16:
        raise ValueError(f"lambda_min is undefined for K <= 16 (got K={K})")
    sq_k = math.sqrt(K)
    sq_mk = math.sqrt(M * K)
    e = math.e
    return [
        2 * e * H / (K - 2),
        2 * rho / sq_k,
        32 * e * H * _LOG_51200 / K,
        4 * rho * math.sqrt(2 * _LOG_51200) / sq_k,
        320 * math.sqrt(2) * rho / sq_mk,
        320 * sigma / (r_bar * sq_mk),
        8 * e * H / (K - 16),
    ]


def regularization_bound(H, rho, sigma, M, K, r_bar) -> float:
    return max(regularization_terms(H, rho, sigma, M, K, r_bar))


def grid_size(H, B, T, r_bar, lambda_min) -> int:
    n = math.ceil(1.0 + 2.5 * math.log(H * (B + 5 * T * r_bar) / (3 * lambda_min * r_bar)))
    return max(1, n)


def repeat_count(N, H, B, T, r_bar, lambda_min) -> int:
    levels = max(1, math.ceil(math.log2(N))) if N > 1 else 1
    inner = 4 + math.e * H / lambda_min + 80 * H * (B + 5 * T * r_bar) / (lambda_min * r_bar)
    return max(1, math.ceil(8 * math.log(levels * inner)))


@dataclass(frozen=True)
class Hyperparams:
    T: int
    beta: float
    r_bar: float
    xi_bar: float
    lambda_min: float
    N: int
    C: int
    constants: ProblemConstants
    zeta: float
    M: int
    K: int
    R: int
    mode: str = "theory"

    @property
    def rounds_per_iteration(self) -> int:
        """Worst-case communication rounds used by one outer iteration."""
        return search_bound(self.N, self.C)[1]

    @property
    def worst_case_rounds(self) -> int:
        return self.T * self.rounds_per_iteration

    def to_dict(self) -> dict:
        d = asdict(self)
        d["constants"] = asdict(self.constants)
        return d


def _check_inputs(M, K, R, constants: ProblemConstants):
    if M < 1 or K < 1 or R < 1:
        raise ValueError("M, K and R must be >= 1")
    c = constants
    for name in ("H", "B", "sigma", "rho"):
        if not getattr(c, name) > 0:
            raise ValueError(f"{name} must be positive, got {getattr(c, name)}")
    if c.alpha < 0:
        raise ValueError("alpha must be nonnegative")


def _settings_for_T(T, M, K, R, c: ProblemConstants, z, mode) -> Hyperparams:
    r_bar = trust_radius(T, K, c.B, c.alpha)
    xi_bar = math.exp(c.alpha * r_bar)
    lam = regularization_bound(c.H, c.rho, c.sigma, M, K, r_bar)
    N = grid_size(c.H, c.B, T, r_bar, lam)
    C = repeat_count(N, c.H, c.B, T, r_bar, lam)
    return Hyperparams(T, 0.0, r_bar, xi_bar, lam, N, C, c, z, M, K, R, mode)


def derive_hyperparams(
    M: int, K: int, R: int, H: float, B: float, sigma: float, rho: float, alpha: float
) -> Hyperparams:
    """Theory settings. T below 1 is raised to 1 with a warning."""
    c = ProblemConstants(H=H, B=B, sigma=sigma, rho=rho, alpha=alpha)
    _check_inputs(M, K, R, c)
    if K < THEORY_MIN_K:
        warnings.warn(f"K={K} is below {THEORY_MIN_K}; the guarantee does not apply", stacklevel=2)
    z = zeta(K, alpha, B)
    T = main_iterations(R, z)
    if T < 1:
        warnings.warn(
            f"R={R} gives T={T} main iterations (need R >~ {theory_min_rounds(K, alpha, B):.3g});"
            " using T=1",
            stacklevel=2,
        )
        T = 1
    return _settings_for_T(T, M, K, R, c, z, "theory")


def fit_hyperparams(M: int, K: int, R: int, constants: ProblemConstants) -> Hyperparams:
    """Budget-fit settings: the largest T whose worst-case round count fits in R.

    All other quantities use the theory rules for that T. Raises ConfigError
    (with the smallest workable R) if even T = 1 does not fit.
    """
    _check_inputs(M, K, R, constants)
    z = zeta(K, constants.alpha, constants.B)
    one = _settings_for_T(1, M, K, R, constants, z, "budget-fit")
    if one.worst_case_rounds > R:
        raise ConfigError(
            f"R={R} cannot fit one outer iteration ({one.worst_case_rounds} rounds)",
            min_rounds=one.worst_case_rounds,
        )
    lo, hi = 1, max(1, R // one.rounds_per_iteration)
    # worst-case rounds grow with T, so bisect for the largest feasible T
    best = one
    while lo < hi:
        mid = (lo + hi + 1) // 2
        cand = _settings_for_T(mid, M, K, R, constants, z, "budget-fit")
        if cand.worst_case_rounds <= R:
            lo, best = mid, cand
        else:
            hi = mid - 1
    return best


def fedsn(
    x0,
    problem: GlmProblem,
    hyper: Hyperparams,
    seed: int,
    *,
    key: tuple = (),
    streams: Sequence[IndexStream] | None = None,
    oracle_case: OracleCase = OracleCase.DIFFERENT_SAMPLES,
    replace: bool = True,
    monitor: Callable[[np.ndarray], float] | None = None,
    noiseless: bool = False,
) -> RunRecord:
    """Run T outer iterations x <- x + (approximate trust-region step).

    The budget check happens before any computation: T times the worst-case
    rounds per iteration must not exceed R. ``noiseless`` replaces the
    sampled oracles with exact ones (for fixed-point checks).
    """
    if hyper.worst_case_rounds > hyper.R:
        raise ConfigError(
            f"T={hyper.T} iterations need up to {hyper.worst_case_rounds} rounds, budget is "
            f"R={hyper.R}",
            min_rounds=hyper.worst_case_rounds,
        )
    M, K = hyper.M, hyper.K
    if streams is None:
        streams = spawn_streams(problem.count, seed, key, M, replace=replace)
    monitor = monitor or problem.loss
    start = time.perf_counter()
    x = problem._vec(x0).astype(np.float64, copy=True)
    traj = [monitor(x)]
    rounds_at = [0]
    rounds = 0
    outcomes = []
    step_norms = []
    for _ in range(hyper.T):
        res = constrained_quadratic_solver(
            x, hyper, problem, M, K, streams, oracle_case=oracle_case, noiseless=noiseless
        )
        x = x + res.u
        rounds += res.solves
        outcomes.append(res.outcome)
        step_norms.append(float(np.linalg.norm(res.u)))
        traj.append(monitor(x))
        rounds_at.append(rounds)
    per_access = 2 if OracleCase(oracle_case) is OracleCase.DIFFERENT_SAMPLES else 1
    return RunRecord(
        alg="fedsn",
        config={"hyper": hyper.to_dict(), "oracle_case": OracleCase(oracle_case).value},
        seed=seed,
        trajectory=traj,
        rounds_at=rounds_at,
        oracle_calls=rounds * M * K,
        x_final=x,
        wall_time=time.perf_counter() - start,
        extra={
            "outcomes": outcomes,
            "step_norms": step_norms,
            "sample_draws": rounds * M * K * per_access,
        },
    )
