"""Experiment orchestration: tune each algorithm over its grid, rerun the winner, emit tables.

A setting is one (algorithm, mu, M, K, R). For each setting every grid point
is run ``tuning_reps`` times and scored by the mean of its best metric over
communication rounds; the winning point is rerun with ``final_reps`` fresh
seeds. Tuning and final runs use disjoint stream keys, and every grid point
sees the same tuning streams.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import os
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np
import scipy

from .baselines import fedac, fedac_params, local_sgd, minibatch_sgd
from .dataio import Dataset, load_libsvm, synthetic_logistic
from .errors import ConfigError, DivergenceError
from .fedsn import fedsn, fit_hyperparams
from .fedsnlite import LiteConfig, fedsn_lite
from .glm import GlmProblem, estimate_constants, newton_reference
from .records import RunRecord

log = logging.getLogger(__name__)

ETA_GRID = (
    0.0001, 0.0002, 0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05,
    0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0,
)  # fmt: skip
BETA_GRID = (0.0, 0.1, 0.3, 0.5, 0.7, 0.9)
LAMBDA_INTERNAL_GRID = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)
ALGORITHMS = ("fedsn", "fedsn-lite", "fedac1", "fedac2", "local-sgd", "minibatch-sgd")
CSV_HEADER = (
    "alg", "mu", "M", "K", "R", "eta", "beta", "lambda_internal",
    "metric_mean", "metric_std", "reps", "oracle_calls",
)  # fmt: skip
TUNE_PHASE = 0
FINAL_PHASE = 1

CONFIG_SCHEMA: dict = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "experiment config",
    "type": "object",
    "additionalProperties": False,
    "required": ["algorithms", "data", "M", "R"],
    "properties": {
        "algorithms": {
            "type": "array",
            "minItems": 1,
            "items": {"enum": list(ALGORITHMS)},
        },
        "data": {
            "description": "LIBSVM file or a synthetic logistic problem",
            "oneOf": [
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["path"],
                    "properties": {
                        "path": {"type": "string"},
                        "label_mode": {"enum": ["pm1", "01"]},
                        "dim": {"type": "integer", "minimum": 1},
                        "add_bias": {"type": "boolean"},
                    },
                },
                {
                    "type": "object",
                    "additionalProperties": False,
                    "required": ["synthetic"],
                    "properties": {
                        "synthetic": {
                            "type": "object",
                            "additionalProperties": False,
                            "required": ["count", "dim"],
                            "properties": {
                                "count": {"type": "integer", "minimum": 1},
                                "dim": {"type": "integer", "minimum": 1},
                                "seed": {"type": "integer", "minimum": 0},
                                "density": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
                                "binary": {"type": "boolean"},
                                "scale": {"type": "number", "exclusiveMinimum": 0},
                            },
                        }
                    },
                },
            ],
        },
        "mu": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 1},
        "M": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "R": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "K": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1},
        "KR": {"type": "integer", "minimum": 1, "description": "fixed K*R; K = KR / R"},
        "eta_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "beta_grid": {"type": "array", "items": {"type": "number", "minimum": 0, "exclusiveMaximum": 1}},
        "lambda_internal_grid": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
        "fedac_mode": {
            "enum": ["explicit", "internal"],
            "description": "explicit: lambda = mu in the formulas, no oracle term; internal: tune lambda",
        },
        "nu": {"type": "number", "exclusiveMinimum": 0},
        "replace": {"type": "boolean", "description": "sample with replacement"},
        "seed": {"type": "integer", "minimum": 0},
        "tuning_reps": {"type": "integer", "minimum": 1},
        "final_reps": {"type": "integer", "minimum": 1},
        "metric": {"enum": ["relative-suboptimality", "validation-loss"]},
        "train_size": {"type": "integer", "minimum": 1},
        "f_star": {
            "description": "'compute' (Newton reference) or a number per mu",
            "oneOf": [
                {"const": "compute"},
                {"type": "number", "exclusiveMinimum": 0},
                {"type": "object", "additionalProperties": {"type": "number", "exclusiveMinimum": 0}},
            ],
        },
        "fedsn": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "B": {"type": "number", "exclusiveMinimum": 0},
                "probe_budget": {"type": "integer", "minimum": 1},
                "oracle_case": {"enum": ["different-samples", "same-sample"]},
            },
        },
    },
}


def relative_suboptimality(F: float, F_star: float) -> float:
    if not F_star > 0:
        raise ValueError(f"F_star must be positive, got {F_star}")
    return (F - F_star) / F_star


@dataclass(frozen=True)
class ExperimentConfig:
    algorithms: tuple[str, ...]
    data: dict
    M: tuple[int, ...]
    R: tuple[int, ...]
    mu: tuple[float, ...] = (0.0,)
    K: tuple[int, ...] | None = None
    KR: int | None = None
    eta_grid: tuple[float, ...] = ETA_GRID
    beta_grid: tuple[float, ...] = BETA_GRID
    lambda_internal_grid: tuple[float, ...] = LAMBDA_INTERNAL_GRID
    fedac_mode: str = "explicit"
    nu: float = 1.25
    replace: bool = True
    seed: int = 0
    tuning_reps: int = 20
    final_reps: int = 20
    metric: str = "relative-suboptimality"
    train_size: int | None = None
    f_star: Any = "compute"
    fedsn: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        try:
            jsonschema.validate(raw, CONFIG_SCHEMA)
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {path}: {exc.message}") from None
        kw = dict(raw)
        for name in ("algorithms", "M", "R", "mu", "K", "eta_grid", "beta_grid", "lambda_internal_grid"):
            if name in kw:
                kw[name] = tuple(kw[name])
        cfg = cls(**kw)
        if (cfg.K is None) == (cfg.KR is None):
            raise ConfigError("give exactly one of K (list) or KR (fixed product)")
        if cfg.KR is not None:
            bad = [r for r in cfg.R if cfg.KR % r]
            if bad:
                raise ConfigError(f"KR={cfg.KR} is not divisible by R in {bad}")
        if cfg.metric == "validation-loss" and cfg.train_size is None:
            raise ConfigError("validation-loss needs train_size")
        if cfg.fedac_mode == "explicit" and any(a.startswith("fedac") for a in cfg.algorithms):
            if any(m <= 0 for m in cfg.mu):
                raise ConfigError("explicit FedAc mode uses mu as its strong-convexity estimate; mu must be > 0")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        out = {}
        for name in self.__dataclass_fields__:
            v = getattr(self, name)
            if v is not None:
                out[name] = list(v) if isinstance(v, tuple) else v
        return out

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def pairs_KR(self) -> list[tuple[int, int]]:
        if self.KR is not None:
            return [(self.KR // r, r) for r in self.R]
        return [(k, r) for k in self.K for r in self.R]


@dataclass(frozen=True)
class GridPoint:
    eta: float | None = None
    beta: float | None = None
    lambda_internal: float | None = None


@dataclass
class ResultRow:
    alg: str
    mu: float
    M: int
    K: int
    R: int
    eta: float | None
    beta: float | None
    lambda_internal: float | None
    metric_mean: float
    metric_std: float
    reps: int
    oracle_calls: int
    finals: list = field(default_factory=list, compare=False, repr=False)

    @property
    def key(self) -> tuple:
        return (self.alg, self.mu, self.M, self.K, self.R)

    @property
    def metric_median(self) -> float:
        return float(np.median(self.finals)) if self.finals else math.nan

    def csv_fields(self) -> list[str]:
        vals = [getattr(self, name) for name in CSV_HEADER]
        return ["" if v is None else repr(v) if isinstance(v, float) else str(v) for v in vals]


# --------------------------------------------------------------------------- data


def load_data(spec: dict) -> Dataset:
    if "synthetic" in spec:
        s = spec["synthetic"]
        return synthetic_logistic(
            s["count"],
            s["dim"],
            s.get("seed", 0),
            density=s.get("density", 1.0),
            binary=s.get("binary", False),
            scale=s.get("scale", 1.0),
        )
    return load_libsvm(
        spec["path"],
        label_mode=spec.get("label_mode", "pm1"),
        dim=spec.get("dim"),
        add_bias=spec.get("add_bias", False),
    )


@dataclass
class Problems:
    """Training problem, metric, and (optionally) the reference optimum for one mu."""

    train: GlmProblem
    metric: Callable[[float], float]
    monitor: Callable[[np.ndarray], float]
    f_star: float | None = None


def build_problems(cfg: ExperimentConfig, data: Dataset, mu: float) -> Problems:
    if cfg.metric == "validation-loss":
        train, val = data.split(cfg.train_size)
        val_problem = GlmProblem(val, mu)
        problem = GlmProblem(train, mu)
        return Problems(problem, lambda F: F, val_problem.loss)
    problem = GlmProblem(data, mu)
    f_star = resolve_f_star(cfg.f_star, problem, mu)
    return Problems(problem, lambda F: relative_suboptimality(F, f_star), problem.loss, f_star)


def resolve_f_star(spec, problem: GlmProblem, mu: float) -> float:
    if spec == "compute":
        return newton_reference(problem, tol=1e-10).value
    if isinstance(spec, dict):
        for k, v in spec.items():
            if float(k) == mu:
                return float(v)
        raise ConfigError(f"no f_star given for mu={mu}")
    return float(spec)


# --------------------------------------------------------------------------- runs


def grid_for(alg: str, cfg: ExperimentConfig, mu: float) -> list[GridPoint]:
    if alg == "fedsn":
        return [GridPoint()]
    if alg.startswith("fedac"):
        if cfg.fedac_mode == "internal":
            lams = cfg.lambda_internal_grid
        else:
            lams = (mu,)
        return [GridPoint(eta=e, lambda_internal=l) for e, l in itertools.product(cfg.eta_grid, lams)]
    return [GridPoint(eta=e, beta=b) for e, b in itertools.product(cfg.eta_grid, cfg.beta_grid)]


def run_once(
    alg: str,
    problem: GlmProblem,
    point: GridPoint,
    M: int,
    K: int,
    R: int,
    seed: int,
    key: tuple,
    cfg: ExperimentConfig,
    monitor,
    fedsn_hyper=None,
) -> RunRecord:
    x0 = np.zeros(problem.dim)
    common = dict(seed=seed, key=key, replace=cfg.replace, monitor=monitor)
    if alg == "local-sgd":
        return local_sgd(x0, problem, point.eta, point.beta, M, K, R, **common)
    if alg == "minibatch-sgd":
        return minibatch_sgd(x0, problem, point.eta, point.beta, M, K, R, **common)
    if alg == "fedsn-lite":
        lite = LiteConfig(T=R, eta=point.eta, K=K, M=M, nu=cfg.nu, beta=point.beta)
        return fedsn_lite(x0, problem, lite, **common)
    if alg in ("fedac1", "fedac2"):
        internal = cfg.fedac_mode == "internal"
        params = fedac_params(alg[-1], point.eta, point.lambda_internal, K, internal=internal)
        rec = fedac(x0, problem, params, M, K, R, **common)
        rec.alg = alg
        return rec
    if alg == "fedsn":
        case = cfg.fedsn.get("oracle_case", "different-samples")
        return fedsn(x0, problem, fedsn_hyper, oracle_case=case, **common)
    raise ValueError(f"unknown algorithm {alg!r}")


@dataclass
class Job:
    setting: tuple  # (alg, mu, M, K, R)
    point: GridPoint
    phase: int
    rep: int


@dataclass
class Outcome:
    best: float
    record: RunRecord | None
    diverged: bool = False


def _execute(job: Job, ctx: dict) -> Outcome:
    alg, mu, M, K, R = job.setting
    probs: Problems = ctx["problems"][mu]
    try:
        rec = run_once(
            alg,
            probs.train,
            job.point,
            M,
            K,
            R,
            ctx["cfg"].seed,
            (job.phase, job.rep),
            ctx["cfg"],
            probs.monitor,
            fedsn_hyper=ctx["hyper"].get(job.setting),
        )
    except DivergenceError:
        return Outcome(math.inf, None, diverged=True)
    metrics = [probs.metric(v) if math.isfinite(v) else math.inf for v in rec.trajectory]
    rec.extra["metric"] = metrics
    best = min(metrics)
    return Outcome(best, rec, diverged=not math.isfinite(best))


def _map(fn, jobs, threads: int):
    if threads <= 1:
        return [fn(j) for j in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))


@dataclass
class ResultTable:
    rows: list[ResultRow]
    records: list[dict]
    f_star: dict
    tuning: list[dict]


def settings_of(cfg: ExperimentConfig) -> list[tuple]:
    out = []
    for alg in cfg.algorithms:
        for mu in cfg.mu:
            for M in cfg.M:
                for K, R in cfg.pairs_KR():
                    out.append((alg, float(mu), M, K, R))
    return sorted(out)


def tune_and_run(cfg: ExperimentConfig, *, threads: int = 1, data: Dataset | None = None) -> ResultTable:
    data = load_data(cfg.data) if data is None else data
    problems = {float(mu): build_problems(cfg, data, float(mu)) for mu in cfg.mu}
    for p in problems.values():
        # fill lazily built caches before any worker threads start
        p.train.dataset.rows(np.array([0]))
        p.train.dataset.csr
    settings = settings_of(cfg)
    hyper = {}
    for s in settings:
        if s[0] == "fedsn":
            alg, mu, M, K, R = s
            fs = cfg.fedsn
            consts = estimate_constants(
                problems[mu].train, fs.get("probe_budget", 10_000), cfg.seed, B=fs.get("B", 10.0)
            )
            hyper[s] = fit_hyperparams(M, K, R, consts)
    ctx = {"cfg": cfg, "problems": problems, "hyper": hyper}

    def run(job):
        return _execute(job, ctx)

    tune_jobs = [
        Job(s, pt, TUNE_PHASE, rep)
        for s in settings
        for pt in grid_for(s[0], cfg, s[1])
        for rep in range(cfg.tuning_reps)
    ]
    tune_out = _map(run, tune_jobs, threads)
    scores: dict[tuple, dict[GridPoint, list[Outcome]]] = {}
    for job, out in zip(tune_jobs, tune_out):
        scores.setdefault(job.setting, {}).setdefault(job.point, []).append(out)

    tuning_log = []
    chosen: dict[tuple, GridPoint | None] = {}
    for s in settings:
        best_pt, best_score = None, math.inf
        for pt in grid_for(s[0], cfg, s[1]):
            outs = scores[s][pt]
            stable = not any(o.diverged for o in outs)
            score = float(np.mean([o.best for o in outs])) if stable else math.inf
            tuning_log.append({"setting": list(s), "point": pt.__dict__, "score": score, "stable": stable})
            if stable and score < best_score:
                best_pt, best_score = pt, score
        chosen[s] = best_pt

    final_jobs = [
        Job(s, chosen[s], FINAL_PHASE, rep)
        for s in settings
        if chosen[s] is not None
        for rep in range(cfg.final_reps)
    ]
    final_out = _map(run, final_jobs, threads)
    by_setting: dict[tuple, list[tuple[Job, Outcome]]] = {}
    for job, out in zip(final_jobs, final_out):
        by_setting.setdefault(job.setting, []).append((job, out))

    rows, records = [], []
    for s in settings:
        alg, mu, M, K, R = s
        pt = chosen[s]
        if pt is None:
            rows.append(ResultRow(alg, mu, M, K, R, None, None, None, math.inf, math.nan, 0, 0))
            continue
        outs = by_setting.get(s, [])
        finals = [o.best for _, o in outs]
        calls = sum(o.record.oracle_calls for _, o in outs if o.record is not None)
        rows.append(
            ResultRow(
                alg, mu, M, K, R, pt.eta, pt.beta, pt.lambda_internal,
                float(np.mean(finals)), float(np.std(finals)), len(finals), calls, finals,
            )  # fmt: skip
        )
        for job, o in outs:
            rec = {"alg": alg, "mu": mu, "M": M, "K": K, "R": R, "rep": job.rep,
                   "point": pt.__dict__, "best": o.best, "diverged": o.diverged}  # fmt: skip
            if o.record is not None:
                rec.update(
                    trajectory=o.record.trajectory,
                    metric=o.record.extra["metric"],
                    rounds_at=o.record.rounds_at,
                    oracle_calls=o.record.oracle_calls,
                )
            records.append(rec)
    rows.sort(key=lambda r: r.key)
    f_star = {repr(mu): p.f_star for mu, p in problems.items()}
    return ResultTable(rows, records, f_star, tuning_log)


# --------------------------------------------------------------------------- output


def rows_to_csv(rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for row in rows:
        w.writerow(row.csv_fields())
    return buf.getvalue()


def _num(text: str, kind):
    if text == "":
        return None
    return kind(text)


def read_csv(text: str) -> list[ResultRow]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_HEADER:
        raise ValueError(f"unexpected CSV header {header}")
    rows = []
    for f in reader:
        rows.append(
            ResultRow(
                f[0], float(f[1]), int(f[2]), int(f[3]), int(f[4]),
                _num(f[5], float), _num(f[6], float), _num(f[7], float),
                float(f[8]), float(f[9]), int(f[10]), int(f[11]),
            )  # fmt: skip
        )
    return rows


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def emit(table: ResultTable, out_dir, *, cfg: ExperimentConfig | None = None, meta: dict | None = None):
    """Write results.csv, trajectories.jsonl and meta.json; returns their paths."""
    if not table.rows:
        raise ValueError("no results to emit")
    for rec in table.records:
        if "trajectory" in rec and not rec["trajectory"]:
            raise ValueError("empty trajectory in results")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "results.csv"
        csv_path.write_text(rows_to_csv(table.rows))
        traj_path = out / "trajectories.jsonl"
        with traj_path.open("w") as fh:
            for rec in table.records:
                fh.write(json.dumps(_jsonable(rec), sort_keys=True) + "\n")
        meta_path = out / "meta.json"
        info = {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "f_star": table.f_star,
            "tuning": table.tuning,
        }
        if cfg is not None:
            info["config"] = cfg.to_dict()
            info["config_hash"] = cfg.hash()
        info.update(meta or {})
        meta_path.write_text(json.dumps(_jsonable(info), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc}") from exc
    return csv_path, traj_path, meta_path


def run_experiment(cfg: ExperimentConfig, out_dir, *, threads: int = 1) -> ResultTable:
    start = time.time()
    table = tune_and_run(cfg, threads=threads)
    emit(
        table,
        out_dir,
        cfg=cfg,
        meta={"wall_seconds": time.time() - start, "threads": threads, "cpus": os.cpu_count()},
    )
    return table
