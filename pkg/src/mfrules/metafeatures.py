"""Metafeature construction.

Data-driven metafeatures (DDMF) factorize the training matrix ``X ~ L R``,
assign every fine-grained feature to the metafeature holding its largest
loading in ``R``, sum each instance's features per group and divide by the
instance's number of active features. Domain metafeatures (DomainMF) take
the assignment from an expert feature-to-group table instead.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import DegenerateWarning, DomainError, NumericalError, ParseError
from .sparse import as_csr, row_active_counts

SPACE_FORMAT_VERSION = 1
DEFAULT_K_GRID = (10, 30, 50, 70, 100, 300, 500, 700, 1000)
OTHER_GROUP = "other"

# dense SVD below this many cells, ARPACK above
_DENSE_SVD_CELLS = 4_000_000


@dataclass(frozen=True)
class FactorModel:
    method: str
    k: int
    L: np.ndarray
    R: np.ndarray
    seed: int
    n_iter: int = 0
    error: float = float("nan")
    trace: tuple = ()
    singular_values: np.ndarray | None = None


@dataclass(frozen=True)
class BinaryAssignment:
    assignment: np.ndarray
    k: int
    negative_dominant: np.ndarray | None = None

    @property
    def m(self) -> int:
        return len(self.assignment)

    def histogram(self) -> np.ndarray:
        return np.bincount(self.assignment, minlength=self.k)

    def indicator(self) -> sp.csr_matrix:
        """The binarized loading matrix, transposed: ``m x k`` one-hot rows."""
        m = self.m
        return sp.csr_matrix((np.ones(m), (np.arange(m), self.assignment)), shape=(m, self.k))


@dataclass(frozen=True)
class MetafeatureMatrix:
    values: np.ndarray
    source_active_counts: np.ndarray

    @property
    def empty_rows(self) -> np.ndarray:
        return np.flatnonzero(self.source_active_counts == 0)


def _check_k(X, k):
    n, m = X.shape
    if not 1 <= k <= min(n, m):
        raise DomainError(f"k={k} outside [1, {min(n, m)}]")


# ---------------------------------------------------------------------------
# factorizations

def nmf_objective(X, L, R, xnorm2=None):
    """Squared Frobenius error ``||X - L R||^2`` without forming ``L R``."""
    if xnorm2 is None:
        xnorm2 = float((X.data ** 2).sum()) if sp.issparse(X) else float((X ** 2).sum())
    cross = float(np.sum(L * (X @ R.T)))
    return xnorm2 - 2.0 * cross + float(np.sum((L.T @ L) * (R @ R.T)))


def fit_nmf(X, k: int, seed: int = 0, max_iter: int = 200, tol: float = 1e-4,
            eps: float = 1e-12) -> FactorModel:
    """Multiplicative-update NMF for the squared Frobenius loss.

    Starts from seeded uniform (0, 1] factors scaled by ``sqrt(mean(X)/k)``
    and stops when the relative objective decrease drops below ``tol`` or
    after ``max_iter`` sweeps. ``tol=0`` runs all sweeps.
    """
    X = as_csr(X)
    if X.nnz and X.data.min() < 0:
        raise DomainError("NMF needs a nonnegative matrix")
    _check_k(X, k)
    n, m = X.shape
    rng = np.random.default_rng(seed)
    mean = X.sum() / (n * m)
    scale = np.sqrt(mean / k) if mean > 0 else 1.0
    L = (1.0 - rng.random((n, k))) * scale
    R = (1.0 - rng.random((k, m))) * scale
    Xt = X.T.tocsr()
    xnorm2 = float((X.data ** 2).sum())
    obj = nmf_objective(X, L, R, xnorm2)
    trace = [obj]
    it = 0
    for it in range(1, max_iter + 1):
        R *= (Xt @ L).T / ((L.T @ L) @ R + eps)
        XRt = X @ R.T
        RRt = R @ R.T
        L *= XRt / (L @ RRt + eps)
        new = xnorm2 - 2.0 * float(np.sum(L * XRt)) + float(np.sum((L.T @ L) * RRt))
        trace.append(new)
        if not np.isfinite(new):
            raise NumericalError("NMF objective became non-finite")
        done = obj > 0 and (obj - new) / obj < tol
        obj = new
        if done or obj <= 0:
            break
    return FactorModel("NMF", k, L, R, seed, it, float(np.sqrt(max(obj, 0.0))), tuple(trace))


def fit_svd(X, k: int, seed: int = 0) -> FactorModel:
    """Truncated SVD with ``L = U_k S_k`` and ``R = V_k^T``.

    Each right singular vector is flipped so its largest-magnitude entry is
    positive.
    """
    X = as_csr(X)
    _check_k(X, k)
    n, m = X.shape
    if n * m <= _DENSE_SVD_CELLS or k >= min(n, m) - 1:
        U, s, Vt = np.linalg.svd(X.toarray(), full_matrices=False)
        U, s, Vt = U[:, :k], s[:k], Vt[:k]
    else:
        rng = np.random.default_rng(seed)
        v0 = rng.standard_normal(min(n, m))
        U, s, Vt = spla.svds(X, k=k, v0=v0, solver="arpack")
        order = np.argsort(-s, kind="stable")
        U, s, Vt = U[:, order], s[order], Vt[order]
    if not (np.all(np.isfinite(U)) and np.all(np.isfinite(Vt))):
        raise NumericalError("SVD returned non-finite factors")
    pivot = np.argmax(np.abs(Vt), axis=1)
    signs = np.where(Vt[np.arange(k), pivot] < 0, -1.0, 1.0)
    Vt = Vt * signs[:, None]
    U = U * signs[None, :]
    L = U * s[None, :]
    err2 = float((X.data ** 2).sum()) - float(np.sum(s ** 2))
    return FactorModel("SVD", k, L, Vt.copy(), seed, 0, float(np.sqrt(max(err2, 0.0))),
                       (), singular_values=s.copy())


def binarize_R(model) -> BinaryAssignment:
    """Assign each feature (column of ``R``) to its maximum loading; ties -> lowest index.

    Accepts a :class:`FactorModel` or a raw ``k x m`` array.
    """
    R = model.R if isinstance(model, FactorModel) else np.asarray(model, dtype=np.float64)
    assignment = np.argmax(R, axis=0).astype(np.int64)
    best = R[assignment, np.arange(R.shape[1])]
    return BinaryAssignment(assignment, R.shape[0], best < 0)


def project_and_normalize(X, a: BinaryAssignment, normalize: str = "active") -> MetafeatureMatrix:
    """Sum features per metafeature, then rescale rows.

    ``normalize`` is ``"active"`` (divide by the number of active features,
    the default), ``"none"`` (raw group sums) or ``"binary"`` (indicator of a
    nonzero group sum).
    """
    X = as_csr(X)
    if X.shape[1] != a.m:
        raise DomainError(f"assignment covers {a.m} features, matrix has {X.shape[1]}")
    counts = row_active_counts(X)
    values = np.asarray((X @ a.indicator()).todense())
    if normalize == "active":
        nz = counts > 0
        values[nz] /= counts[nz, None]
    elif normalize == "binary":
        values = (values != 0).astype(np.float64)
    elif normalize != "none":
        raise DomainError(f"unknown normalization {normalize!r}")
    if np.any(counts == 0):
        warnings.warn(f"{int(np.sum(counts == 0))} instance(s) have no active features",
                      DegenerateWarning)
    return MetafeatureMatrix(values, counts)


# ---------------------------------------------------------------------------
# metafeature spaces

@dataclass(frozen=True)
class MetafeatureSpace:
    kind: str
    assignment: BinaryAssignment
    member_weights: np.ndarray
    names: tuple = ()
    method: str | None = None
    seed: int | None = None
    normalize: str = "active"
    fit_meta: dict = field(default_factory=dict)

    @property
    def k(self) -> int:
        return self.assignment.k

    @property
    def m(self) -> int:
        return self.assignment.m

    def transform(self, X) -> MetafeatureMatrix:
        return project_and_normalize(X, self.assignment, self.normalize)

    def descriptor(self, j: int, n: int = 20) -> list:
        return top_features(self, j, n)

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.kind.encode())
        h.update(self.assignment.assignment.tobytes())
        h.update(self.member_weights.tobytes())
        h.update(repr((self.names, self.method, self.seed, self.normalize)).encode())
        return h.hexdigest()


def build_ddmf(X_train, k: int, method: str = "NMF", seed: int = 0, *, max_iter: int = 200,
               tol: float = 1e-4, normalize: str = "active") -> MetafeatureSpace:
    """Fit a factorization on training data and freeze the resulting feature grouping."""
    method = method.upper()
    if method == "NMF":
        model = fit_nmf(X_train, k, seed=seed, max_iter=max_iter, tol=tol)
    elif method == "SVD":
        model = fit_svd(X_train, k, seed=seed)
    else:
        raise DomainError(f"unknown factorization {method!r}")
    return space_from_factors(model, normalize=normalize)


def space_from_factors(model: FactorModel, normalize: str = "active") -> MetafeatureSpace:
    a = binarize_R(model)
    weights = model.R[a.assignment, np.arange(a.m)].copy()
    meta = {"n_iter": model.n_iter, "error": model.error,
            "negative_dominant": int(a.negative_dominant.sum())}
    return MetafeatureSpace("DDMF", a, weights, tuple(f"MF{j}" for j in range(model.k)),
                            model.method, model.seed, normalize, meta)


def read_domain_map(path) -> list:
    """Read ``feature_name<TAB>group_name`` lines into a list of pairs."""
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError("expected feature_name<TAB>group_name", lineno)
            pairs.append((parts[0], parts[1]))
    return pairs


def build_domain_mf(mapping, feature_names, normalize: str = "active") -> MetafeatureSpace:
    """Metafeatures from an expert feature-to-group table.

    ``mapping`` is a dict or an iterable of ``(feature, group)`` pairs.
    Groups are numbered in order of first appearance; features absent from
    the table go to a trailing ``"other"`` group.
    """
    pairs = list(mapping.items()) if isinstance(mapping, dict) else list(mapping)
    index = {name: i for i, name in enumerate(feature_names)}
    unknown = sorted({f for f, _ in pairs if f not in index})
    if unknown:
        raise DomainError(f"unknown feature names in domain map: {unknown[:20]}")
    seen = {}
    dup = []
    for f, g in pairs:
        if f in seen:
            dup.append(f)
        seen[f] = g
    if dup:
        raise DomainError(f"features mapped more than once: {sorted(set(dup))[:20]}")
    groups = list(dict.fromkeys(g for _, g in pairs))
    gid = {g: j for j, g in enumerate(groups)}
    m = len(feature_names)
    assignment = np.full(m, -1, dtype=np.int64)
    for f, g in pairs:
        assignment[index[f]] = gid[g]
    unmapped = assignment < 0
    names = list(groups)
    if unmapped.any():
        if OTHER_GROUP in gid:
            raise DomainError(f"group name {OTHER_GROUP!r} is reserved for unmapped features")
        warnings.warn(f"{int(unmapped.sum())} feature(s) not in the domain map go to "
                      f"{OTHER_GROUP!r}", DegenerateWarning)
        assignment[unmapped] = len(groups)
        names.append(OTHER_GROUP)
    a = BinaryAssignment(assignment, len(names), np.zeros(m, dtype=bool))
    return MetafeatureSpace("DomainMF", a, np.ones(m), tuple(names), None, None, normalize,
                            {"unmapped": int(unmapped.sum())})


def top_features(space: MetafeatureSpace, j: int, n: int = 20) -> list:
    """Members of metafeature ``j`` with the largest loadings, as ``(feature, weight)`` pairs."""
    if not 0 <= j < space.k:
        raise DomainError(f"metafeature {j} out of range [0, {space.k})")
    members = np.flatnonzero(space.assignment.assignment == j)
    w = space.member_weights[members]
    order = np.lexsort((members, -w))[:n]
    return [(int(members[i]), float(w[i])) for i in order]


def _feature_ids(d):
    return {int(x[0]) if isinstance(x, (tuple, list)) else int(x) for x in d}


def descriptor_jaccard(d_a, d_b) -> float:
    A, B = _feature_ids(d_a), _feature_ids(d_b)
    union = A | B
    return len(A & B) / len(union) if union else 1.0


def match_metafeatures(d_a, d_b, c: float = 0.5) -> bool:
    """Two metafeatures are the same when their top-feature sets overlap by Jaccard >= c."""
    if not d_a or not d_b:
        raise DomainError("descriptors must be nonempty")
    return descriptor_jaccard(d_a, d_b) >= c


def save_space(space: MetafeatureSpace, path) -> None:
    rec = {
        "format": "mfrules.space", "version": SPACE_FORMAT_VERSION,
        "kind": space.kind, "method": space.method, "k": space.k, "seed": space.seed,
        "normalize": space.normalize, "names": list(space.names),
        "assignment": space.assignment.assignment.tolist(),
        "member_weights": space.member_weights.tolist(),
        "negative_dominant": space.assignment.negative_dominant.astype(int).tolist(),
        "descriptors": [top_features(space, j, 20) for j in range(space.k)],
        "fit_meta": space.fit_meta,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh)


def load_space(path) -> MetafeatureSpace:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    if rec.get("format") != "mfrules.space" or rec.get("version") != SPACE_FORMAT_VERSION:
        raise DomainError(f"{path}: not a version-{SPACE_FORMAT_VERSION} metafeature space")
    a = BinaryAssignment(np.asarray(rec["assignment"], dtype=np.int64), rec["k"],
                         np.asarray(rec["negative_dominant"], dtype=bool))
    return MetafeatureSpace(rec["kind"], a, np.asarray(rec["member_weights"], dtype=np.float64),
                            tuple(rec["names"]), rec["method"], rec["seed"], rec["normalize"],
                            rec["fit_meta"])
