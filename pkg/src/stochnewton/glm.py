"""Regularised logistic-regression objective and its oracles.

F(x) = (1/n) sum_i log(1 + exp(-b_i a_i.x)) + (mu/2)||x||^2

The ridge term is folded into every oracle: stochastic gradients carry
``mu * x`` and stochastic Hessian-vector products carry ``mu * u``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dataio import Dataset, IndexStream
from .errors import ConvergenceError

log = logging.getLogger(__name__)

LOSS_KINDS = ("logistic",)


def log1pexp_neg(t):
    """log(1 + exp(-t)), stable for any |t|."""
    t = np.asarray(t, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(t))) + np.maximum(-t, 0.0)


def curvature(t):
    """sigma(t) * sigma(-t), the per-sample logistic curvature."""
    return expit(t) * expit(-t)


@dataclass(frozen=True)
class GradEstimate:
    vector: np.ndarray
    drawn_index: int


@dataclass(frozen=True)
class HvpEstimate:
    vector: np.ndarray
    drawn_index: int


@dataclass(frozen=True)
class ProblemConstants:
    """Smoothness H, radius bound B, gradient noise sigma, HVP noise rho, QSC alpha."""

    H: float
    B: float
    sigma: float
    rho: float
    alpha: float


class GlmProblem:
    """Mean logistic loss plus ridge ``mu`` over a :class:`Dataset`."""

    def __init__(self, dataset: Dataset, mu: float = 0.0, loss: str = "logistic"):
        if mu < 0:
            raise ValueError("mu must be nonnegative")
        if loss not in LOSS_KINDS:
            raise ValueError(f"unsupported loss {loss!r}; available: {LOSS_KINDS}")
        self.dataset = dataset
        self.mu = float(mu)
        self.loss_kind = loss

    @property
    def dim(self) -> int:
        return self.dataset.dim

    @property
    def count(self) -> int:
        return self.dataset.count

    def _vec(self, x, name="x") -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"{name} has shape {x.shape}, expected ({self.dim},)")
        return x

    def margins(self, x) -> np.ndarray:
        """t_i = b_i a_i.x for every sample."""
        x = self._vec(x)
        return self.dataset.labels * (self.dataset.csr @ x)

    def loss(self, x) -> float:
        x = self._vec(x)
        t = self.margins(x)
        return float(np.mean(log1pexp_neg(t)) + 0.5 * self.mu * np.dot(x, x))

    def full_gradient(self, x) -> np.ndarray:
        x = self._vec(x)
        t = self.margins(x)
        coef = -self.dataset.labels * expit(-t)
        return self.dataset.csr.T @ coef / self.count + self.mu * x

    def hessian(self, x) -> np.ndarray:
        """Dense d x d Hessian; only for small d."""
        x = self._vec(x)
        s = curvature(self.margins(x))
        A = self.dataset.csr
        hess = (A.T @ A.multiply(s[:, None])).toarray() / self.count
        hess[np.diag_indices_from(hess)] += self.mu
        return hess

    def hvp(self, x, u) -> np.ndarray:
        """Exact Hessian-vector product, O(nnz)."""
        x = self._vec(x)
        u = self._vec(u, "u")
        A = self.dataset.csr
        s = curvature(self.margins(x))
        return A.T @ (s * (A @ u)) / self.count + self.mu * u

    def sample_coefficients(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Per-sample gradient coefficient -b_i sigma(-t_i) and curvature at x."""
        t = self.margins(x)
        return -self.dataset.labels * expit(-t), curvature(t)

    # Batched kernels: row r of the output uses sample idx[r] and point X[r].
    # Single-sample oracles go through these too, so every algorithm shares
    # one arithmetic path.

    def batch_gradients(self, X, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        X = np.broadcast_to(np.asarray(X, dtype=np.float64), (idx.size, self.dim))
        rows = self.dataset.rows(idx)
        b = self.dataset.labels[idx]
        t = b * np.einsum("ij,ij->i", rows, X)
        coef = -b * expit(-t)
        return coef[:, None] * rows + self.mu * X

    def batch_hvps(self, X, U, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        X = np.broadcast_to(np.asarray(X, dtype=np.float64), (idx.size, self.dim))
        U = np.broadcast_to(np.asarray(U, dtype=np.float64), (idx.size, self.dim))
        rows = self.dataset.rows(idx)
        t = self.dataset.labels[idx] * np.einsum("ij,ij->i", rows, X)
        s = curvature(t)
        return (s * np.einsum("ij,ij->i", rows, U))[:, None] * rows + self.mu * U

    def stochastic_gradient(self, x, stream: IndexStream) -> GradEstimate:
        x = self._vec(x)
        z = stream.draw()
        return GradEstimate(self.batch_gradients(x[None, :], [z])[0], z)

    def stochastic_hvp(self, x, u, z: int) -> HvpEstimate:
        x = self._vec(x)
        u = self._vec(u, "u")
        if not 0 <= z < self.count:
            raise IndexError(f"sample index {z} out of range [0, {self.count})")
        return HvpEstimate(self.batch_hvps(x[None, :], u[None, :], [z])[0], int(z))


@dataclass(frozen=True)
class NewtonResult:
    x: np.ndarray
    value: float
    iterations: int
    grad_norm: float


def newton_reference(
    problem: GlmProblem, tol: float = 1e-12, max_iters: int = 100, x0=None
) -> NewtonResult:
    """Exact Newton iterations on the dense d x d system until ||grad|| <= tol.

    The full step is always tried first. If it would raise the loss (far from
    the optimum) it is halved until it does not. With mu = 0, a "stationary"
    point at which every margin is positive certifies separable data and is
    reported as a failure.
    """
    d = problem.dim
    x = np.zeros(d) if x0 is None else np.array(x0, dtype=np.float64)
    f = problem.loss(x)
    gnorm = np.inf
    for it in range(max_iters + 1):
        g = problem.full_gradient(x)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            if problem.mu == 0 and np.all(problem.margins(x) > 0):
                # every margin positive: F(c x) keeps falling as c grows
                raise ConvergenceError(
                    "data are linearly separable and mu = 0; the minimizer is at infinity",
                    grad_norm=gnorm,
                    x=x,
                )
            return NewtonResult(x, f, it, gnorm)
        if it == max_iters or not np.isfinite(gnorm):
            break
        hess = problem.hessian(x)
        try:
            step = np.linalg.solve(hess, -g)
        except np.linalg.LinAlgError:
            step = None
        if step is None or not np.all(np.isfinite(step)):
            log.warning("singular Newton system at iteration %d; adding 1e-10 floor", it)
            step = np.linalg.solve(hess + 1e-10 * np.eye(d), -g)
        t = 1.0
        for _ in range(60):
            x_new = x + t * step
            f_new = problem.loss(x_new)
            if np.isfinite(f_new) and f_new <= f + 1e-10 * max(1.0, abs(f)):
                break
            t *= 0.5
        x, f = x_new, f_new
    raise ConvergenceError(
        f"Newton did not reach ||grad|| <= {tol:g} in {max_iters} iterations "
        f"(final ||grad|| = {gnorm:.3e})",
        grad_norm=gnorm,
        x=x,
    )


def qsc_alpha(dataset: Dataset) -> float:
    """Quasi-self-concordance bound max_i ||b_i a_i|| (= max row norm)."""
    return float(dataset.row_norms().max())


def estimate_constants(
    problem: GlmProblem,
    probe_budget: int = 10_000,
    seed: int = 0,
    *,
    B: float = 10.0,
    H: float | None = None,
    sigma: float | None = None,
    rho: float | None = None,
    alpha: float | None = None,
) -> ProblemConstants:
    """Default problem constants; any of them can be overridden.

    H and rho use the worst-case per-sample curvature max||a||^2 / 4, and sigma
    is the empirical RMS deviation of ``probe_budget`` stochastic gradients at
    x = 0 from the exact gradient there.
    """
    max_sq = float(problem.dataset.row_norms().max() ** 2)
    if sigma is None:
        gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
        stream = IndexStream(problem.count, gen)
        zero = np.zeros(problem.dim)
        g0 = problem.full_gradient(zero)
        total = 0.0
        left = probe_budget
        while left > 0:
            chunk = min(left, 4096)
            G = problem.batch_gradients(zero, stream.draw_many(chunk))
            total += float(np.sum((G - g0) ** 2))
            left -= chunk
        sigma = float(np.sqrt(total / probe_budget))
    return ProblemConstants(
        H=max_sq / 4.0 + problem.mu if H is None else H,
        B=B,
        sigma=sigma,
        rho=max_sq / 4.0 if rho is None else rho,
        alpha=qsc_alpha(problem.dataset) if alpha is None else alpha,
    )
