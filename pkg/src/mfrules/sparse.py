"""Sparse data handling: CSR matrices, datasets, libsvm I/O, tf-idf and resampling.

Matrices are carried as canonical ``scipy.sparse.csr_matrix`` objects: sorted
column indices, no duplicates, no explicit zeros, finite values.
"""
from __future__ import annotations

import math
import os
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateWarning, DomainError, ParseError

SparseMatrix = sp.csr_matrix


def as_csr(X, copy=False) -> sp.csr_matrix:
    """Return ``X`` as a canonical float64 CSR matrix.

    Dense arrays and any scipy sparse format are accepted. Duplicate entries
    are summed and explicit zeros removed.
    """
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64, copy=copy)
    else:
        X = sp.csr_matrix(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    X.sum_duplicates()
    X.eliminate_zeros()
    X.sort_indices()
    if not np.all(np.isfinite(X.data)):
        raise DomainError("matrix contains non-finite values")
    return X


def check_csr(X: sp.csr_matrix) -> None:
    """Assert the structural invariants of a canonical CSR matrix."""
    n, m = X.shape
    ptr, ind, val = X.indptr, X.indices, X.data
    if len(ptr) != n + 1 or ptr[0] != 0 or ptr[-1] != len(val):
        raise DomainError("bad row offsets")
    if np.any(np.diff(ptr) < 0):
        raise DomainError("row offsets must be non-decreasing")
    if len(ind) != len(val):
        raise DomainError("column index / value length mismatch")
    if len(ind) and (ind.min() < 0 or ind.max() >= m):
        raise DomainError("column index out of range")
    for i in range(n):
        row = ind[ptr[i]:ptr[i + 1]]
        if np.any(np.diff(row) <= 0):
            raise DomainError(f"row {i}: column indices not strictly increasing")
    if not np.all(np.isfinite(val)) or np.any(val == 0):
        raise DomainError("stored values must be finite and nonzero")


def row_active_counts(X) -> np.ndarray:
    """Number of stored (nonzero) entries in every row."""
    X = X if sp.isspmatrix_csr(X) else as_csr(X)
    return np.diff(X.indptr).astype(np.int64)


def sparsity(X) -> float:
    """Fraction of zero cells, ``1 - nnz / (n*m)``."""
    n, m = X.shape
    if n * m == 0:
        return 0.0
    return 1.0 - X.nnz / (n * m)


@dataclass(frozen=True)
class Dataset:
    X: sp.csr_matrix
    y: np.ndarray
    feature_names: list = field(default=None)
    instance_ids: list = field(default=None)

    def __post_init__(self):
        X = as_csr(self.X)
        y = np.asarray(self.y)
        if y.ndim != 1 or len(y) != X.shape[0]:
            raise DomainError(f"label length {len(y)} does not match {X.shape[0]} rows")
        if not np.all((y == 0) | (y == 1)):
            raise DomainError("labels must be 0 or 1")
        names = self.feature_names
        if names is None:
            names = [f"f{j + 1}" for j in range(X.shape[1])]
        if len(names) != X.shape[1]:
            raise DomainError(f"{len(names)} feature names for {X.shape[1]} columns")
        ids = self.instance_ids
        if ids is None:
            ids = [str(i) for i in range(X.shape[0])]
        if len(ids) != X.shape[0]:
            raise DomainError(f"{len(ids)} instance ids for {X.shape[0]} rows")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int8))
        object.__setattr__(self, "feature_names", list(names))
        object.__setattr__(self, "instance_ids", list(ids))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def m(self) -> int:
        return self.X.shape[1]

    @property
    def positive_rate(self) -> float:
        return float(self.y.mean()) if self.n else 0.0

    @property
    def sparsity(self) -> float:
        return sparsity(self.X)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.y[idx], self.feature_names,
                       [self.instance_ids[i] for i in idx])


# ---------------------------------------------------------------------------
# libsvm text format

def _parse_header(line: str) -> dict:
    out = {}
    for tok in line.lstrip("#").split():
        if "=" in tok:
            key, val = tok.split("=", 1)
            out[key.strip()] = val.strip()
    return out


def load_libsvm(path, n_cols: int | None = None, feature_names=None) -> Dataset:
    """Read a binary-labelled libsvm file.

    Each data line is ``<label> <col>:<value> ...`` with 1-based column
    indices. Labels may be ``0/1`` or ``-1/+1``. Lines starting with ``#`` are
    comments; a comment of the form ``# n_cols=<m>`` fixes the column count.
    An optional trailing ``# <id>`` on a data line sets the instance id.
    """
    rows, cols, vals, labels, ids = [], [], [], [], []
    header_cols = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                hdr = _parse_header(line)
                if "n_cols" in hdr:
                    try:
                        header_cols = int(hdr["n_cols"])
                    except ValueError:
                        raise ParseError(f"bad n_cols header {hdr['n_cols']!r}", lineno)
                continue
            inst_id = None
            if "#" in line:
                line, comment = line.split("#", 1)
                inst_id = comment.strip() or None
            toks = line.split()
            try:
                lab = float(toks[0])
            except ValueError:
                raise ParseError(f"bad label {toks[0]!r}", lineno)
            if lab in (1.0,):
                lab = 1
            elif lab in (0.0, -1.0):
                lab = 0
            else:
                raise DomainError(f"line {lineno}: non-binary label {toks[0]!r}")
            r = len(labels)
            seen = set()
            for tok in toks[1:]:
                c, sep, v = tok.partition(":")
                if not sep:
                    raise ParseError(f"expected <col>:<value>, got {tok!r}", lineno)
                try:
                    c = int(c)
                    v = float(v)
                except ValueError:
                    raise ParseError(f"malformed entry {tok!r}", lineno)
                if c < 1:
                    raise ParseError(f"column index {c} < 1", lineno)
                if c in seen:
                    raise ParseError(f"duplicate column {c}", lineno)
                if not math.isfinite(v):
                    raise ParseError(f"non-finite value in {tok!r}", lineno)
                seen.add(c)
                if v != 0.0:
                    rows.append(r)
                    cols.append(c - 1)
                    vals.append(v)
            labels.append(lab)
            ids.append(inst_id if inst_id is not None else str(r))
    if not labels:
        raise DomainError("no instances")
    m = max(cols) + 1 if cols else 0
    override = n_cols if n_cols is not None else header_cols
    if override is not None:
        if override < m:
            raise DomainError(f"n_cols={override} but column {m} is present")
        m = override
    X = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), m), dtype=np.float64)
    if feature_names is not None and not isinstance(feature_names, (list, tuple)):
        feature_names = read_lines(feature_names)
    return Dataset(as_csr(X), np.array(labels, dtype=np.int8), feature_names, ids)


def write_libsvm(d: Dataset, path) -> None:
    """Write ``d`` so that :func:`load_libsvm` reads back an identical dataset."""
    X = d.X
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# n_cols={d.m}\n")
        for i in range(d.n):
            lo, hi = X.indptr[i], X.indptr[i + 1]
            parts = [str(int(d.y[i]))]
            parts += [f"{c + 1}:{v!r}" for c, v in zip(X.indices[lo:hi], X.data[lo:hi].tolist())]
            fh.write(" ".join(parts) + f" # {d.instance_ids[i]}\n")


def read_lines(path) -> list:
    with open(path, "r", encoding="utf-8") as fh:
        return [ln.rstrip("\n") for ln in fh if ln.strip()]


def read_manifest(path) -> dict:
    """Parse a ``key: value`` / ``key = value`` dataset manifest."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            for sep in ("=", ":"):
                if sep in line:
                    k, v = line.split(sep, 1)
                    out[k.strip()] = v.strip()
                    break
            else:
                raise ParseError(f"expected key/value pair, got {line!r}", lineno)
    return out


# ---------------------------------------------------------------------------
# tf-idf

def tfidf_transform(counts) -> sp.csr_matrix:
    """Raw-count tf times smooth idf, rows scaled to unit L2 norm."""
    X = as_csr(counts, copy=True)
    if np.any(X.data < 0):
        raise DomainError("tf-idf needs nonnegative counts")
    n = X.shape[0]
    df = np.bincount(X.indices, minlength=X.shape[1])
    idf = np.log((1.0 + n) / (1.0 + df)) + 1.0
    X.data *= idf[X.indices]
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    counts_per_row = np.diff(X.indptr)
    norms = np.where(counts_per_row > 0, norms, 1.0)
    X.data /= np.repeat(norms, counts_per_row)
    return X


# ---------------------------------------------------------------------------
# resampling

@dataclass(frozen=True)
class SplitPlan:
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    alpha: float
    beta: float
    seed: int


@dataclass(frozen=True)
class FoldPlan:
    n_folds: int
    fold_assignments: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments == fold)

    def rest_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_assignments != fold)


@dataclass(frozen=True)
class BootstrapSample:
    indices: np.ndarray
    seed: int


def _floor_size(x: float) -> int:
    # guard against 0.2*100 == 19.999999999999996
    return int(math.floor(x + 1e-9))


def stratified_order(y, seed: int) -> np.ndarray:
    """Permutation of ``range(len(y))`` whose every prefix is near class-proportional.

    Instances of each class are shuffled, member ``j`` of a class with ``c``
    members gets key ``(j + 0.5) / c``, and everything is sorted on that key.
    """
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    keys = np.empty(len(y))
    for label in np.unique(y):
        members = np.flatnonzero(y == label)
        members = members[rng.permutation(len(members))]
        keys[members] = (np.arange(len(members)) + 0.5) / len(members)
    # ties between classes resolved by a seeded tiebreak
    tiebreak = rng.random(len(y))
    return np.lexsort((tiebreak, keys))


def split_train_val_test(d, alpha: float, beta: float, seed: int) -> SplitPlan:
    """Stratified train/validation/test split of sizes alpha*beta*n, alpha*(1-beta)*n, (1-alpha)*n.

    ``d`` may be a :class:`Dataset` or a label array. Rounding remainders go
    to the training partition.
    """
    y = d.y if isinstance(d, Dataset) else np.asarray(d)
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not 0 < beta <= 1:
        raise DomainError(f"beta must lie in (0, 1], got {beta}")
    n = len(y)
    n_test = _floor_size((1 - alpha) * n)
    n_val = _floor_size(alpha * (1 - beta) * n)
    order = stratified_order(y, seed)
    test = np.sort(order[:n_test])
    val = np.sort(order[n_test:n_test + n_val])
    train = np.sort(order[n_test + n_val:])
    classes = np.unique(y)
    for name, part in (("train", train), ("validation", val), ("test", test)):
        if len(part) and len(np.unique(y[part])) < len(classes):
            warnings.warn(f"{name} partition is missing a class", DegenerateWarning)
    return SplitPlan(train, val, test, alpha, beta, seed)


def split_rest(y_rest, beta: float, seed: int):
    """Split an index range into stratified train/validation parts by ``beta``.

    Returns positions into ``y_rest``.
    """
    n = len(y_rest)
    n_val = _floor_size((1 - beta) * n)
    order = stratified_order(y_rest, seed)
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def make_folds(d, n_folds: int, seed: int) -> FoldPlan:
    """Stratified fold assignment; fold sizes differ by at most one."""
    y = d.y if isinstance(d, Dataset) else np.asarray(d)
    if n_folds < 2:
        raise DomainError("need at least 2 folds")
    if n_folds > len(y):
        raise DomainError(f"{n_folds} folds for {len(y)} instances")
    rng = np.random.default_rng(seed)
    # classes laid out back to back, dealt round-robin
    order = []
    for label in np.unique(y):
        members = np.flatnonzero(y == label)
        order.append(members[rng.permutation(len(members))])
    order = np.concatenate(order)
    assign = np.empty(len(y), dtype=np.int64)
    assign[order] = np.arange(len(y)) % n_folds
    return FoldPlan(n_folds, assign, seed)


def bootstrap_sample(train_size: int, seed: int) -> BootstrapSample:
    if train_size < 1:
        raise DomainError("train_size must be >= 1")
    rng = np.random.default_rng(seed)
    return BootstrapSample(rng.integers(0, train_size, size=train_size), seed)


def child_seed(master: int, *key: int) -> int:
    """Deterministic 32-bit child seed for a stage identified by integer ``key``."""
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1)[0])


__all__ = [
    "SparseMatrix", "as_csr", "check_csr", "row_active_counts", "sparsity",
    "Dataset", "load_libsvm", "write_libsvm", "read_manifest", "read_lines",
    "tfidf_transform", "SplitPlan", "FoldPlan", "BootstrapSample",
    "split_train_val_test", "split_rest", "make_folds", "bootstrap_sample",
    "stratified_order", "child_seed",
]
