"""Planted-structure benchmark: binary behavior data driven by latent feature groups."""
from __future__ import annotations

import os

import numpy as np
import scipy.sparse as sp

from .sparse import Dataset, write_libsvm


def planted_groups(n: int = 2000, m: int = 5000, g: int = 20, seed: int = 0,
                   mean_active: float = 40.0, concentration: float = 0.3,
                   label_scale: float = 8.0):
    """Generate the benchmark.

    Features are split into ``g`` equal contiguous groups. Each instance draws
    a group mixture from a symmetric Dirichlet, then ``1 + Poisson(mean_active - 1)``
    behaviors: a group from the mixture and a feature from that group with
    mildly skewed popularity. Labels are Bernoulli of a logistic function of
    the instance's per-group activity shares.

    Returns ``(dataset, groups)`` where ``groups[f]`` is the planted group of feature ``f``.
    """
    rng = np.random.default_rng(seed)
    groups = np.repeat(np.arange(g), int(np.ceil(m / g)))[:m]
    members = [np.flatnonzero(groups == j) for j in range(g)]
    popularity = []
    for mem in members:
        w = 1.0 / (np.arange(len(mem)) + 10.0)
        popularity.append(w / w.sum())
    theta = rng.dirichlet(np.full(g, concentration), size=n)
    n_draws = 1 + rng.poisson(mean_active - 1.0, size=n)
    rows, cols = [], []
    for i in range(n):
        gs = rng.choice(g, size=n_draws[i], p=theta[i])
        for j in np.unique(gs):
            cnt = int(np.sum(gs == j))
            picks = rng.choice(members[j], size=cnt, p=popularity[j])
            rows.extend([i] * cnt)
            cols.extend(picks.tolist())
    X = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, m))
    X.data[:] = 1.0  # repeated picks collapse to one binary behavior
    effects = rng.standard_normal(g)
    counts = np.diff(X.indptr)
    shares = (X @ sp.csr_matrix((np.ones(m), (np.arange(m), groups)), shape=(m, g))).toarray()
    shares /= np.maximum(counts, 1)[:, None]
    logit = label_scale * (shares @ effects - np.median(shares @ effects))
    y = (rng.random(n) < 1.0 / (1.0 + np.exp(-logit))).astype(np.int8)
    names = [f"g{groups[f]:02d}_f{f}" for f in range(m)]
    return Dataset(X, y, names), groups


def write_planted(out_dir, **kwargs):
    """Write ``data.svm``, ``features.txt``, ``domain_map.tsv`` and ``manifest.txt``."""
    os.makedirs(out_dir, exist_ok=True)
    d, groups = planted_groups(**kwargs)
    write_libsvm(d, os.path.join(out_dir, "data.svm"))
    with open(os.path.join(out_dir, "features.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(d.feature_names) + "\n")
    with open(os.path.join(out_dir, "domain_map.tsv"), "w", encoding="utf-8") as fh:
        for name, grp in zip(d.feature_names, groups):
            fh.write(f"{name}\tgroup{grp:02d}\n")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write(f"name = planted-{kwargs.get('g', 20)}\nn = {d.n}\nm = {d.m}\n"
                 f"label = Bernoulli(logistic(group shares))\n")
    return d, groups
