"""Regularised quadratic subproblems and their one-shot-averaged SGD solver.

For a base point x the subproblem is

    Q(u) = 1/2 u'(xi * hess F(x) + lam * I) u + grad F(x)'u,

accessed only through stochastic gradients gamma = xi*h(x,u;z') + lam*u + g(x;z).
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._util import guard, machine_average
from .dataio import IndexStream
from .glm import GlmProblem

log = logging.getLogger(__name__)

_PREFETCH_LIMIT = 20_000_000  # doubles


class OracleCase(str, enum.Enum):
    DIFFERENT_SAMPLES = "different-samples"
    SAME_SAMPLE = "same-sample"


class QuadSubproblem:
    """Q_lam anchored at ``base_point``.

    ``noiseless=True`` swaps the stochastic oracle for the exact gradient of
    Q (no samples are drawn); it exists for deterministic checks.
    """

    def __init__(
        self,
        problem: GlmProblem,
        base_point,
        xi_bar: float = 1.0,
        lam: float = 0.0,
        oracle_case: OracleCase = OracleCase.SAME_SAMPLE,
        noiseless: bool = False,
    ):
        if xi_bar < 1.0:
            raise ValueError(f"xi_bar must be >= 1, got {xi_bar}")
        if lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        self.problem = problem
        self.base_point = problem._vec(base_point).copy()
        self.xi_bar = float(xi_bar)
        self.lam = float(lam)
        self.oracle_case = OracleCase(oracle_case)
        self.noiseless = noiseless
        self._coef, self._curv = problem.sample_coefficients(self.base_point)
        self.base_gradient = problem.full_gradient(self.base_point)
        self._ridge_x = problem.mu * self.base_point

    @property
    def dim(self) -> int:
        return self.problem.dim

    def with_lambda(self, lam: float) -> "QuadSubproblem":
        sub = object.__new__(QuadSubproblem)
        sub.__dict__.update(self.__dict__)
        if lam < 0.0:
            raise ValueError(f"lambda must be >= 0, got {lam}")
        sub.lam = float(lam)
        return sub

    def matrix(self) -> np.ndarray:
        """Dense xi * hess F(x) + lam * I."""
        hess = self.xi_bar * self.problem.hessian(self.base_point)
        hess[np.diag_indices_from(hess)] += self.lam
        return hess

    def exact_gradient(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        return (
            self.xi_bar * self.problem.hvp(self.base_point, u) + self.lam * u + self.base_gradient
        )

    def value(self, u) -> float:
        u = np.asarray(u, dtype=np.float64)
        quad = self.xi_bar * self.problem.hvp(self.base_point, u) + self.lam * u
        return float(0.5 * u @ quad + self.base_gradient @ u)

    def draw(self, stream: IndexStream, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices (z, z') for k consecutive accesses by one machine."""
        if self.noiseless:
            empty = np.empty(0, dtype=np.int64)
            return empty, empty
        if self.oracle_case is OracleCase.SAME_SAMPLE:
            z = stream.draw_many(k)
            return z, z
        zz = stream.draw_many(2 * k).reshape(k, 2)
        return zz[:, 0], zz[:, 1]

    def gamma(self, U, z, zp, rows_g=None, rows_h=None) -> np.ndarray:
        """Row r: gradient estimate at U[r] using gradient sample z[r], HVP sample zp[r].

        ``rows_g`` / ``rows_h`` may carry the already gathered feature rows.
        """
        U = np.asarray(U, dtype=np.float64)
        if self.noiseless:
            return np.stack([self.exact_gradient(u) for u in U])
        data = self.problem.dataset
        mu = self.problem.mu
        if rows_h is None:
            rows_h = data.rows(zp)
        au = np.einsum("ij,ij->i", rows_h, U)
        hvp = (self._curv[zp] * au)[:, None] * rows_h + mu * U
        if rows_g is None:
            rows_g = rows_h if z is zp else data.rows(z)
        grad = self._coef[z][:, None] * rows_g + self._ridge_x
        return self.xi_bar * hvp + self.lam * U + grad


def quad_gradient_access(sub: QuadSubproblem, u, stream: IndexStream):
    """One oracle access at ``u``: returns (gamma, (z, z'))."""
    u = np.asarray(u, dtype=np.float64)
    z, zp = sub.draw(stream, 1)
    g = sub.gamma(u[None, :], z, zp)[0]
    if sub.noiseless:
        return g, None
    return g, (int(z[0]), int(zp[0]))


@dataclass(frozen=True)
class Schedule:
    """Stepsizes and averaging weights for one regularisation level lam > 0."""

    lam: float
    K: int
    H: float
    rho: float
    xi_bar: float = 1.0

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("Schedule needs lam > 0; use ConstantSchedule for lam = 0")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    @property
    def cap(self) -> float:
        return max(self.xi_bar * self.H + self.lam, self.rho**2 / self.lam)

    @property
    def small_k(self) -> bool:
        return self.K <= (2.0 / self.lam) * self.cap

    @property
    def branch(self) -> str:
        return "small-K" if self.small_k else "large-K"

    @property
    def eta_lam(self) -> float:
        noise = self.lam / self.rho**2 if self.rho > 0 else math.inf
        return 0.5 * min(1.0 / (self.xi_bar * self.H + self.lam), noise)

    @property
    def pivot(self) -> float:
        return (8.0 / self.lam) * self.cap

    def _check(self, k: int) -> None:
        if not 0 <= k < self.K:
            raise IndexError(f"step {k} outside [0, {self.K})")

    def eta(self, k: int) -> float:
        self._check(k)
        half = self.K // 2
        if self.small_k or k < half:
            return self.eta_lam
        return 4.0 / (self.lam * (self.pivot + k - half))

    def weight(self, k: int) -> float:
        self._check(k)
        if self.small_k:
            eta = self.eta_lam
            return (1.0 - self.lam * eta + eta**2 * self.rho**2) ** (-k - 1)
        half = self.K // 2
        if k < half:
            return 0.0
        return self.pivot + k - half - 1

    def stepsizes(self) -> np.ndarray:
        return np.array([self.eta(k) for k in range(self.K)])

    def normalized_weights(self) -> np.ndarray:
        if self.small_k:
            # geometric growth can overflow for long runs; normalise in log space
            eta = self.eta_lam
            base = 1.0 - self.lam * eta + eta**2 * self.rho**2
            logw = -(np.arange(self.K) + 1.0) * math.log(base)
            w = np.exp(logw - logw.max())
        else:
            w = np.array([self.weight(k) for k in range(self.K)])
        total = w.sum()
        if not total > 0:
            raise ValueError("degenerate schedule: all averaging weights are zero")
        return w / total


@dataclass(frozen=True)
class ConstantSchedule:
    """Constant stepsize and uniform weights 1/K (the lam = 0 mode)."""

    eta_value: float
    K: int

    def __post_init__(self):
        if not self.eta_value > 0:
            raise ValueError("eta must be positive")
        if self.K < 1:
            raise ValueError("K must be >= 1")

    def eta(self, k: int) -> float:
        if not 0 <= k < self.K:
            raise IndexError(f"step {k} outside [0, {self.K})")
        return self.eta_value

    def weight(self, k: int) -> float:
        if not 0 <= k < self.K:
            raise IndexError(f"step {k} outside [0, {self.K})")
        return 1.0 / self.K

    def stepsizes(self) -> np.ndarray:
        return np.full(self.K, self.eta_value)

    def normalized_weights(self) -> np.ndarray:
        return np.full(self.K, 1.0 / self.K)


def eta_k(schedule, k: int) -> float:
    return schedule.eta(k)


def w_k(schedule, k: int) -> float:
    return schedule.weight(k)


def regularized_quadratic_solver(
    sub: QuadSubproblem,
    M: int,
    K: int,
    beta: float,
    schedule,
    streams: Sequence[IndexStream],
) -> np.ndarray:
    """M independent K-step SGD runs on ``sub`` from u = 0, then one average.

    Iterate u_k (k = 1..K) is weighted by w_{k-1}, so u_0 never contributes.
    Costs one communication round and M*K oracle accesses.
    """
    if M < 1 or K < 1:
        raise ValueError("M and K must be >= 1")
    if len(streams) != M:
        raise ValueError(f"need one stream per machine ({M}), got {len(streams)}")
    if schedule.K != K:
        raise ValueError(f"schedule built for K={schedule.K}, solver asked for K={K}")
    weights = schedule.normalized_weights()
    etas = schedule.stepsizes()
    draws = [sub.draw(s, K) for s in streams]
    Z = np.array([z for z, _ in draws]).reshape(M, -1)
    ZP = np.array([zp for _, zp in draws]).reshape(M, -1)
    same = sub.oracle_case is OracleCase.SAME_SAMPLE
    d = sub.dim
    # gather every feature row of the round at once when it fits comfortably
    prefetch = not sub.noiseless and M * K * d * (1 if same else 2) <= _PREFETCH_LIMIT
    if prefetch:
        data = sub.problem.dataset
        RH = data.rows(ZP.T.reshape(-1)).reshape(K, M, d)
        RG = RH if same else data.rows(Z.T.reshape(-1)).reshape(K, M, d)

    U = np.zeros((M, d))
    U_prev = U
    acc = np.zeros_like(U)
    for k in range(K):
        if sub.noiseless:
            gam = sub.gamma(U, None, None)
        else:
            zp = ZP[:, k]
            z = zp if same else Z[:, k]
            if prefetch:
                gam = sub.gamma(U, z, zp, RG[k], RH[k])
            else:
                gam = sub.gamma(U, z, zp)
        U_next = U - etas[k] * gam
        if beta and k > 0:
            U_next = U_next + beta * (U - U_prev)
        guard(U_next, k + 1, "quadratic-solver iterate")
        U_prev, U = U, U_next
        if weights[k]:
            acc += weights[k] * U
    return machine_average(acc)


def exact_solve(sub: QuadSubproblem) -> tuple[np.ndarray, float]:
    """Dense minimiser of Q and its norm r*(lam)."""
    A = sub.matrix()
    rhs = -sub.base_gradient
    try:
        u = np.linalg.solve(A, rhs)
        ok = np.all(np.isfinite(u))
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        log.warning("singular subproblem at lam=%g; solving with a 1e-10 floor", sub.lam)
        u = np.linalg.solve(A + 1e-10 * np.eye(sub.dim), rhs)
    return u, float(np.linalg.norm(u))
