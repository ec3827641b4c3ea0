from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np


def fingerprint(config: dict) -> str:
    """Stable short hash of a JSON-serialisable config."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=float)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class RunRecord:
    """One algorithm run.

    ``trajectory[i]`` is the monitored metric after ``rounds_at[i]``
    communication rounds; entry 0 is the starting point.
    """

    alg: str
    config: dict
    seed: int
    trajectory: list[float]
    rounds_at: list[int]
    oracle_calls: int
    x_final: np.ndarray
    wall_time: float = 0.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.trajectory) != len(self.rounds_at):
            raise ValueError("trajectory and rounds_at lengths differ")

    @property
    def rounds(self) -> int:
        return self.rounds_at[-1] if self.rounds_at else 0

    @property
    def best(self) -> float:
        """Lowest metric seen at any communication point (non-finite values ignored)."""
        vals = [v for v in self.trajectory if math.isfinite(v)]
        if not vals:
            return math.inf
        return min(vals)

    @property
    def final(self) -> float:
        return self.trajectory[-1]

    @property
    def fingerprint(self) -> str:
        return fingerprint(self.config)

    def to_json(self) -> dict:
        return {
            "alg": self.alg,
            "config": self.config,
            "fingerprint": self.fingerprint,
            "seed": self.seed,
            "trajectory": [float(v) for v in self.trajectory],
            "rounds_at": list(self.rounds_at),
            "oracle_calls": self.oracle_calls,
            "best": self.best,
        }
