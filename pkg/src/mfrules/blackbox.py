"""L2-regularized logistic regression black-box with rate-matched thresholding."""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .errors import DegenerateWarning, DomainError, NumericalError
from .sparse import as_csr

MODEL_FORMAT_VERSION = 1
DEFAULT_C_GRID = tuple(10.0 ** p for p in range(-3, 4))


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    intercept: float
    C: float
    n_iter: int = 0
    objective: float = float("nan")
    converged: bool = False
    trace: tuple = ()


@dataclass(frozen=True)
class ThresholdedClassifier:
    model: LogisticModel
    threshold: float
    seed: int = 0
    tie_degenerate: bool = False

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise DomainError(f"threshold {self.threshold} outside [0, 1]")


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    precision: float
    recall: float
    f_score: float
    flags: tuple = field(default=())


def _log1pexp(z):
    # log(1 + exp(z)) without overflow
    return np.logaddexp(0.0, z)


def logistic_objective(params, X, y_pm, C):
    """Objective and gradient of 0.5*||w||^2 + C*sum(log(1+exp(-y(w.x+b)))).

    ``params`` is ``[w..., b]``; ``y_pm`` holds labels in {-1, +1}.
    """
    w, b = params[:-1], params[-1]
    margin = y_pm * (X @ w + b)
    loss = 0.5 * w @ w + C * _log1pexp(-margin).sum()
    # d/dmargin log(1+exp(-margin)) = -sigmoid(-margin)
    coef = -C * y_pm * expit(-margin)
    grad = np.empty_like(params)
    grad[:-1] = w + X.T @ coef
    grad[-1] = coef.sum()
    return loss, grad


def train_logreg(X, y, C: float = 1.0, max_iter: int = 1000, tol: float = 1e-6) -> LogisticModel:
    """Fit the logistic model with L-BFGS; the intercept is not penalized.

    Converged means the gradient max-norm fell below ``tol``.
    """
    X = as_csr(X)
    y = np.asarray(y)
    if X.shape[0] != len(y):
        raise DomainError(f"{X.shape[0]} rows but {len(y)} labels")
    if C <= 0:
        raise DomainError("C must be positive")
    if len(np.unique(y)) < 2:
        raise DomainError("training labels contain a single class")
    y_pm = np.where(y == 1, 1.0, -1.0)
    trace = []

    def fun(p):
        return logistic_objective(p, X, y_pm, C)

    x0 = np.zeros(X.shape[1] + 1)
    trace.append(fun(x0)[0])
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   callback=lambda p: trace.append(fun(p)[0]),
                   options={"maxiter": max_iter, "gtol": tol, "ftol": 0.0,
                            "maxcor": 20, "maxls": 50})
    params = res.x
    if not np.all(np.isfinite(params)):
        raise NumericalError("logistic regression diverged")
    obj, grad = fun(params)
    return LogisticModel(weights=params[:-1].copy(), intercept=float(params[-1]), C=float(C),
                         n_iter=int(res.nit), objective=float(obj),
                         converged=bool(np.abs(grad).max() < tol), trace=tuple(trace))


def predict_proba(model: LogisticModel, X) -> np.ndarray:
    X = as_csr(X)
    if X.shape[1] != len(model.weights):
        raise DomainError(f"model expects {len(model.weights)} columns, got {X.shape[1]}")
    return expit(X @ model.weights + model.intercept)


def calibrate_threshold(train_scores, train_positive_rate: float):
    """Threshold ``t`` so that the fraction of ``score > t`` approaches the rate from below.

    Returns ``(t, tie_degenerate)``. ``tie_degenerate`` is True when score ties
    prevent the predicted positive fraction from matching the rate to within
    one instance.
    """
    s = np.sort(np.asarray(train_scores, dtype=np.float64))[::-1]
    n = len(s)
    if n == 0:
        raise DomainError("no scores to calibrate on")
    if not 0.0 <= train_positive_rate <= 1.0:
        raise DomainError("rate must lie in [0, 1]")
    target = int(np.floor(train_positive_rate * n + 1e-9))
    # largest achievable count <= target: predicted positives are the top-p scores
    # where p is 0 or a position where the next score is strictly smaller
    p = target
    while 0 < p < n and s[p - 1] == s[p]:
        p -= 1
    if p == 0:
        t = float(s[0])
    elif p == n:
        t = float(np.nextafter(s[-1], -np.inf))
    else:
        t = float(s[p])
    t = min(max(t, 0.0), 1.0)
    degenerate = target - p >= 1
    if degenerate:
        warnings.warn(f"score ties: calibrated positive count {p} vs target {target}",
                      DegenerateWarning)
    return t, degenerate


def predict_labels(clf: ThresholdedClassifier, X) -> np.ndarray:
    return (predict_proba(clf.model, X) > clf.threshold).astype(np.int8)


def fit_thresholded(X, y, C, max_iter=1000, tol=1e-6, seed=0) -> ThresholdedClassifier:
    model = train_logreg(X, y, C, max_iter=max_iter, tol=tol)
    t, degenerate = calibrate_threshold(predict_proba(model, X), float(np.mean(y)))
    return ThresholdedClassifier(model, t, seed, degenerate)


def tune_C(train, val, grid=DEFAULT_C_GRID, max_iter=1000, tol=1e-6, seed=0):
    """Pick the C with the best validation accuracy; ties go to the smaller C.

    ``train`` and ``val`` are :class:`~mfrules.sparse.Dataset` objects.
    Returns ``(C_best, classifier, {C: val_accuracy})``.
    """
    grid = sorted(float(c) for c in grid)
    if not grid:
        raise DomainError("empty C grid")
    best = None
    scores = {}
    for C in grid:
        clf = fit_thresholded(train.X, train.y, C, max_iter, tol, seed)
        if val.n:
            acc = classification_metrics(val.y, predict_labels(clf, val.X)).accuracy
        else:
            acc = 0.0
        scores[C] = acc
        if best is None or acc > best[0]:
            best = (acc, C, clf)
    return best[1], best[2], scores


def classification_metrics(y_true, y_pred) -> MetricsReport:
    y_true = np.asarray(y_true).astype(bool)
    y_pred = np.asarray(y_pred).astype(bool)
    if y_true.shape != y_pred.shape:
        raise DomainError("label arrays differ in length")
    if y_true.size == 0:
        raise DomainError("empty label arrays")
    tp = int(np.sum(y_true & y_pred))
    fp = int(np.sum(~y_true & y_pred))
    fn = int(np.sum(y_true & ~y_pred))
    flags = []
    precision = tp / (tp + fp) if tp + fp else 0.0
    if tp + fp == 0:
        flags.append("no_predicted_positives")
    recall = tp / (tp + fn) if tp + fn else 0.0
    if tp + fn == 0:
        flags.append("no_actual_positives")
    if tp > 0:
        # harmonic mean of precision and recall, as one exact-ratio division
        f = 2 * tp / (2 * tp + fp + fn)
    else:
        f = 0.0
        flags.append("f_score_undefined")
    acc = float(np.mean(y_true == y_pred))
    return MetricsReport(acc, precision, recall, f, tuple(flags))


def save_classifier(clf: ThresholdedClassifier, path) -> None:
    m = clf.model
    rec = {
        "format": "mfrules.logistic", "version": MODEL_FORMAT_VERSION,
        "C": m.C, "intercept": m.intercept, "threshold": clf.threshold, "seed": clf.seed,
        "n_iter": m.n_iter, "objective": m.objective, "converged": m.converged,
        "weights": m.weights.tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(rec, fh)


def load_classifier(path) -> ThresholdedClassifier:
    with open(path, "r", encoding="utf-8") as fh:
        rec = json.load(fh)
    if rec.get("format") != "mfrules.logistic" or rec.get("version") != MODEL_FORMAT_VERSION:
        raise DomainError(f"{path}: not a version-{MODEL_FORMAT_VERSION} model file")
    model = LogisticModel(np.asarray(rec["weights"], dtype=np.float64), rec["intercept"], rec["C"],
                          rec["n_iter"], rec["objective"], rec["converged"])
    return ThresholdedClassifier(model, rec["threshold"], rec["seed"])
