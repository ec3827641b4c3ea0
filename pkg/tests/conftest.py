import numpy as np
import pytest

from stochnewton.dataio import Dataset, synthetic_logistic
from stochnewton.glm import GlmProblem


def tiny_dataset(count=6, dim=3, seed=0):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(count, dim))
    A[rng.random(A.shape) < 0.2] = 0.0
    b = np.where(rng.random(count) < 0.5, -1.0, 1.0)
    return Dataset.from_dense(A, b)


@pytest.fixture
def tiny():
    return tiny_dataset()


@pytest.fixture
def tiny_problem():
    return GlmProblem(tiny_dataset(), mu=0.05)


@pytest.fixture(scope="session")
def small_problem():
    return GlmProblem(synthetic_logistic(400, 5, 3), mu=1e-2)


_VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict(capsys):
    """Record (and print) one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if detail:
            line += f"  ({detail})"
        _VERDICTS[number] = line
        with capsys.disabled():
            print("\n" + line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
