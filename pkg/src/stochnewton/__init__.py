"""Simulated federated optimisation: a stochastic Newton method and first-order baselines."""

from .baselines import FedAcParams, fedac, fedac_params, local_sgd, minibatch_sgd
from .dataio import Dataset, IndexStream, load_libsvm, parse_libsvm, spawn_streams, synthetic_logistic
from .errors import ConfigError, ConvergenceError, DivergenceError, ParseError, SamplingExhausted
from .fedsn import Hyperparams, derive_hyperparams, fedsn, fit_hyperparams
from .fedsnlite import LiteConfig, fedsn_lite
from .glm import GlmProblem, estimate_constants, newton_reference
from .quadcore import (
    ConstantSchedule,
    OracleCase,
    QuadSubproblem,
    Schedule,
    exact_solve,
    regularized_quadratic_solver,
)
from .records import RunRecord
from .trustquad import constrained_quadratic_solver, median_of

__version__ = "0.1.0"
