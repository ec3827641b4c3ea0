"""LIBSVM parsing, the in-memory sparse dataset, and per-machine index streams.

Rows are stored CSR-style (one ``indptr`` plus flat ``indices``/``values``),
features as float64 and labels as float64 in {-1, +1}. Indices are 0-based
internally and 1-based on disk.
"""

from __future__ import annotations

import gzip
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import ParseError, SamplingExhausted

LABEL_MODES = ("pm1", "01")

# Dense row cache is only built when count * dim stays below this.
_DENSE_CACHE_LIMIT = 50_000_000


@dataclass(frozen=True)
class Sample:
    label: int
    indices: np.ndarray
    values: np.ndarray

    def to_dict(self) -> dict[int, float]:
        return {int(i): float(v) for i, v in zip(self.indices, self.values)}


class Dataset:
    """Immutable labelled sparse dataset.

    Construct through :func:`parse_libsvm`, :func:`load_libsvm` or
    :meth:`Dataset.from_dense`; the constructor validates the invariants.
    """

    def __init__(self, labels, indptr, indices, values, dim: int):
        labels = np.asarray(labels, dtype=np.float64)
        indptr = np.asarray(indptr, dtype=np.int64)
        indices = np.asarray(indices, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if labels.ndim != 1 or labels.size < 1:
            raise ValueError("dataset needs at least one sample")
        if not np.all(np.abs(labels) == 1.0):
            raise ValueError("labels must be -1 or +1")
        if indptr.shape != (labels.size + 1,) or indptr[0] != 0 or indptr[-1] != indices.size:
            raise ValueError("inconsistent indptr")
        if indices.shape != values.shape:
            raise ValueError("indices and values differ in length")
        if indices.size and (indices.min() < 0 or indices.max() >= dim):
            raise ValueError("feature index outside [0, dim)")
        for arr in (labels, indptr, indices, values):
            arr.setflags(write=False)
        self.labels = labels
        self.indptr = indptr
        self.indices = indices
        self.values = values
        self.dim = int(dim)
        self._csr = None
        self._dense = None
        self._row_norms = None

    @classmethod
    def from_dense(cls, features, labels) -> "Dataset":
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        csr = sp.csr_matrix(features)
        csr.sort_indices()
        return cls(labels, csr.indptr, csr.indices, csr.data, features.shape[1])

    @property
    def count(self) -> int:
        return int(self.labels.size)

    def __len__(self) -> int:
        return self.count

    def __getitem__(self, i: int) -> Sample:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return Sample(int(self.labels[i]), self.indices[lo:hi], self.values[lo:hi])

    @property
    def samples(self) -> list[Sample]:
        return [self[i] for i in range(self.count)]

    @property
    def csr(self) -> sp.csr_matrix:
        if self._csr is None:
            self._csr = sp.csr_matrix(
                (self.values, self.indices, self.indptr), shape=(self.count, self.dim)
            )
        return self._csr

    def rows(self, idx) -> np.ndarray:
        """Dense copies of the rows ``idx`` as a ``(len(idx), dim)`` array."""
        idx = np.asarray(idx, dtype=np.int64)
        if self._dense is None and self.count * self.dim <= _DENSE_CACHE_LIMIT:
            dense = self.csr.toarray()
            dense.setflags(write=False)
            self._dense = dense
        if self._dense is not None:
            return self._dense[idx]
        return self.csr[idx].toarray()

    def row_norms(self) -> np.ndarray:
        if self._row_norms is None:
            sq = self.csr.multiply(self.csr).sum(axis=1)
            norms = np.sqrt(np.asarray(sq, dtype=np.float64).ravel())
            norms.setflags(write=False)
            self._row_norms = norms
        return self._row_norms

    def subset(self, idx) -> "Dataset":
        csr = self.csr[np.asarray(idx, dtype=np.int64)]
        csr.sort_indices()
        return Dataset(self.labels[idx], csr.indptr, csr.indices, csr.data, self.dim)

    def split(self, n_head: int) -> tuple["Dataset", "Dataset"]:
        """Deterministic head/tail split by row order."""
        if not 0 < n_head < self.count:
            raise ValueError(f"split point {n_head} outside (0, {self.count})")
        return self.subset(np.arange(n_head)), self.subset(np.arange(n_head, self.count))

    def with_bias(self) -> "Dataset":
        """Append a constant-1 feature as column ``dim``."""
        counts = np.diff(self.indptr)
        indptr = np.concatenate([[0], np.cumsum(counts + 1)])
        indices = np.empty(indptr[-1], dtype=np.int64)
        values = np.empty(indptr[-1])
        ends = indptr[1:] - 1
        mask = np.ones(indptr[-1], dtype=bool)
        mask[ends] = False
        indices[mask] = self.indices
        values[mask] = self.values
        indices[ends] = self.dim
        values[ends] = 1.0
        return Dataset(self.labels, indptr, indices, values, self.dim + 1)

    def label_balance(self) -> tuple[int, int]:
        pos = int(np.sum(self.labels > 0))
        return pos, self.count - pos

    def to_libsvm(self) -> str:
        lines = []
        for i in range(self.count):
            s = self[i]
            feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(s.indices, s.values))
            lines.append(f"{s.label:+d} {feats}".rstrip())
        return "\n".join(lines) + "\n"

    def same_as(self, other: "Dataset") -> bool:
        return (
            self.dim == other.dim
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.values, other.values)
        )


def _parse_label(token: str, mode: str, lineno: int) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"non-numeric label {token!r}", lineno) from None
    if mode == "pm1":
        if value in (1.0, -1.0):
            return value
        raise ParseError(f"label {token!r} is not +1/-1 (use label mode '01' for 0/1 files)", lineno)
    if value == 1.0:
        return 1.0
    if value == 0.0:
        return -1.0
    raise ParseError(f"label {token!r} is not 0/1", lineno)


def _lines(stream) -> Iterable[str]:
    if isinstance(stream, bytes):
        return io.StringIO(stream.decode("utf-8")).readlines()
    if isinstance(stream, str):
        return stream.splitlines()
    return (ln.decode("utf-8") if isinstance(ln, bytes) else ln for ln in stream)


def parse_libsvm(stream, *, label_mode: str = "pm1", dim: int | None = None) -> Dataset:
    """Parse LIBSVM text (a string, bytes, or an iterable of lines).

    ``label_mode="pm1"`` accepts only +1/-1 labels; ``"01"`` maps 0 to -1.
    ``dim`` overrides the inferred dimension and must cover every index.
    """
    if label_mode not in LABEL_MODES:
        raise ValueError(f"label_mode must be one of {LABEL_MODES}")
    labels: list[float] = []
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    max_index = 0
    for lineno, raw in enumerate(_lines(stream), start=1):
        tokens = raw.split()
        if not tokens:
            continue
        labels.append(_parse_label(tokens[0], label_mode, lineno))
        prev = 0
        for tok in tokens[1:]:
            key, sep, val = tok.partition(":")
            if not sep:
                raise ParseError(f"feature token {tok!r} lacks ':'", lineno)
            try:
                j = int(key)
            except ValueError:
                raise ParseError(f"bad feature index {key!r}", lineno) from None
            if j < 1:
                raise ParseError(f"feature index {j} < 1", lineno)
            if j <= prev:
                raise ParseError(f"feature indices not strictly increasing ({prev} then {j})", lineno)
            try:
                v = float(val)
            except ValueError:
                raise ParseError(f"bad feature value {val!r}", lineno) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite feature value {val!r}", lineno)
            indices.append(j - 1)
            values.append(v)
            prev = j
        max_index = max(max_index, prev)
        indptr.append(len(indices))
    if not labels:
        raise ParseError("empty input: no data lines")
    if dim is None:
        dim = max(max_index, 1)
    elif dim < max_index:
        raise ParseError(f"dim override {dim} smaller than max feature index {max_index}")
    return Dataset(labels, indptr, indices, values, dim)


def load_libsvm(
    path, *, label_mode: str = "pm1", dim: int | None = None, add_bias: bool = False
) -> Dataset:
    """Read a LIBSVM file; ``.gz`` files are decompressed on the fly."""
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rt", encoding="utf-8") as fh:
        data = parse_libsvm(fh, label_mode=label_mode, dim=dim)
    return data.with_bias() if add_bias else data


def synthetic_logistic(
    count: int,
    dim: int,
    seed: int = 0,
    *,
    density: float = 1.0,
    binary: bool = False,
    scale: float = 1.0,
) -> Dataset:
    """Labels drawn from a logistic model over random features.

    With ``binary=True`` features are 0/1 at the given density (an a9a-like
    shape); otherwise Gaussian, row-normalised to unit norm.
    """
    rng = np.random.default_rng(seed)
    if binary:
        feats = (rng.random((count, dim)) < density).astype(np.float64)
    else:
        feats = rng.standard_normal((count, dim))
        if density < 1.0:
            feats *= rng.random((count, dim)) < density
        norms = np.linalg.norm(feats, axis=1, keepdims=True)
        feats = np.divide(feats, norms, out=np.zeros_like(feats), where=norms > 0)
    w = rng.standard_normal(dim) * scale
    if binary:
        w /= np.sqrt(max(density * dim, 1.0))
    margin = feats @ w
    labels = np.where(rng.random(count) < 1.0 / (1.0 + np.exp(-margin)), 1.0, -1.0)
    return Dataset.from_dense(feats, labels)


class IndexStream:
    """Sample-index source owned by one simulated machine.

    With replacement, index ``floor(u * count)`` is taken from uniform doubles
    so that drawing k at once or one at a time yields the same sequence.
    Without replacement, the stream walks a fixed ``order`` and raises
    :class:`SamplingExhausted` once it runs out.
    """

    def __init__(self, count: int, generator: np.random.Generator, order: np.ndarray | None = None):
        if count < 1:
            raise ValueError("count must be >= 1")
        self.count = int(count)
        self._gen = generator
        self._order = None if order is None else np.asarray(order, dtype=np.int64)
        self._pos = 0

    @property
    def replace(self) -> bool:
        return self._order is None

    @property
    def remaining(self) -> float:
        return math.inf if self._order is None else self._order.size - self._pos

    def draw(self) -> int:
        return int(self.draw_many(1)[0])

    def draw_many(self, k: int) -> np.ndarray:
        if self._order is None:
            return (self._gen.random(k) * self.count).astype(np.int64)
        if self._pos + k > self._order.size:
            raise SamplingExhausted(
                f"single-pass stream exhausted: {self._order.size - self._pos} left, {k} requested"
            )
        out = self._order[self._pos : self._pos + k]
        self._pos += k
        return out


def _generator(seed: int, key: Sequence[int]) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


# spawn-key tags, kept apart from machine indices (which are >= 0)
_PERMUTATION_TAG = 2**31 - 1
_AUX_TAG = 2**31 - 2


def spawn_streams(
    count: int, seed: int, key: Sequence[int], machines: int, *, replace: bool = True
) -> list[IndexStream]:
    """One independent stream per machine, derived from ``(seed, key, m)``.

    Without replacement the machines split one shared permutation of the
    dataset into equal contiguous blocks, so no index is ever seen twice.
    """
    key = tuple(key)
    if replace:
        return [IndexStream(count, _generator(seed, key + (m,))) for m in range(machines)]
    perm = _generator(seed, key + (_PERMUTATION_TAG,)).permutation(count)
    block = count // machines
    if block < 1:
        raise ValueError(f"{machines} machines cannot share {count} samples without replacement")
    return [
        IndexStream(count, _generator(seed, key + (m,)), order=perm[m * block : (m + 1) * block])
        for m in range(machines)
    ]


def aux_stream(count: int, seed: int, key: Sequence[int]) -> IndexStream:
    """Coordinator-side stream (e.g. the Newton-decrement sample)."""
    return IndexStream(count, _generator(seed, tuple(key) + (_AUX_TAG,)))
