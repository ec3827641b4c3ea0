"""Trust-region-style quadratic solve by binary search over regularisation.

The search looks for a lam whose regularised solution has norm about 2.5 r,
using repeated noisy solves and majority votes to decide which half of the
remaining geometric grid to keep.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dataio import IndexStream
from .glm import GlmProblem
from .quadcore import OracleCase, QuadSubproblem, Schedule, regularized_quadratic_solver

log = logging.getLogger(__name__)

BAND_LOW = 1.5
BAND_HIGH = 3.5
SPLIT = 2.5
PROJECT_RADIUS = 5.0


def median_of(grid: Sequence[float]) -> float:
    """Middle element of a sorted grid; lower middle for even sizes."""
    if len(grid) == 0:
        raise ValueError("median of an empty grid")
    return grid[(len(grid) - 1) // 2]


def initial_grid(lambda_floor: float, N: int) -> tuple[float, ...]:
    if not lambda_floor > 0:
        raise ValueError("lambda_floor must be positive")
    if N < 1:
        raise ValueError("N must be >= 1")
    return tuple(lambda_floor * 1.5**n for n in range(N))


def project(u: np.ndarray, radius: float) -> np.ndarray:
    """min{1, radius/||u||} * u."""
    norm = float(np.linalg.norm(u))
    if norm <= radius:
        return u
    return (radius / norm) * u


@dataclass(frozen=True)
class SearchState:
    grid: tuple[float, ...]
    repeat_count: int
    radius: float
    xi_bar: float
    lambda_floor: float

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.grid, self.grid[1:])):
            raise ValueError("grid must be strictly increasing")


@dataclass
class SearchResult:
    u: np.ndarray
    lam: float | None
    iterations: int
    solves: int
    outcome: str  # "accepted", "zero" or "fallback"
    trace: list = field(default_factory=list)  # per iteration: lam, norms, surviving grid


def search_bound(N: int, C: int) -> tuple[int, int]:
    """Worst-case (grid iterations, subsolver calls) for a grid of size N."""
    iters = int(N).bit_length()  # floor(log2 N) + 1
    return iters, C * iters + 1


def constrained_quadratic_solver(
    x,
    hyper,
    problem: GlmProblem,
    M: int,
    K: int,
    streams: Sequence[IndexStream],
    *,
    oracle_case: OracleCase = OracleCase.DIFFERENT_SAMPLES,
    noiseless: bool = False,
) -> SearchResult:
    """Approximate trust-region step at ``x``; the result always has norm <= 5 r."""
    if K < 1:
        raise ValueError("K must be >= 1")
    c = hyper.constants
    r = hyper.r_bar
    C = hyper.C
    state = SearchState(
        grid=initial_grid(hyper.lambda_min, hyper.N),
        repeat_count=C,
        radius=r,
        xi_bar=hyper.xi_bar,
        lambda_floor=hyper.lambda_min,
    )
    base = QuadSubproblem(
        problem, x, xi_bar=hyper.xi_bar, lam=0.0, oracle_case=oracle_case, noiseless=noiseless
    )
    solves = 0

    def solve(lam: float) -> np.ndarray:
        nonlocal solves
        solves += 1
        sched = Schedule(lam=lam, K=K, H=c.H, rho=c.rho, xi_bar=hyper.xi_bar)
        return regularized_quadratic_solver(base.with_lambda(lam), M, K, 0.0, sched, streams)

    grid = state.grid
    trace = []
    iterations = 0
    while grid:
        iterations += 1
        lam = median_of(grid)
        norms = np.array([np.linalg.norm(solve(lam)) for _ in range(C)])
        in_band = int(np.sum((norms >= BAND_LOW * r) & (norms <= BAND_HIGH * r)))
        small = int(np.sum(norms <= SPLIT * r))
        large = C - small
        step = {"lam": lam, "norms": norms}
        trace.append(step)
        if in_band > C / 2:
            u = project(solve(lam), PROJECT_RADIUS * r)
            return SearchResult(u, lam, iterations, solves, "accepted", trace)
        if small > C / 2:
            grid = tuple(g for g in grid if g < lam)
        elif large > C / 2:
            grid = tuple(g for g in grid if g > lam)
        else:
            return SearchResult(np.zeros(problem.dim), lam, iterations, solves, "zero", trace)
        step["grid"] = grid
    u = project(solve(state.lambda_floor), PROJECT_RADIUS * r)
    return SearchResult(u, state.lambda_floor, iterations, solves, "fallback", trace)
