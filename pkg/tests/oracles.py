"""Slow, obviously-correct reference implementations used by the tests.

None of these share code with the package: they work on explicit pairwise
distance matrices, dense covariance matrices and plain Python sets.
"""

from __future__ import annotations

import math

import numpy as np


def dbscan_bruteforce(points, eps, min_pts):
    """Density reachability on an explicit distance matrix.

    Conventions: a neighbourhood is the closed ball of radius eps and contains
    the point itself; clusters are numbered in order of their lowest-index core
    point; a border point joins the cluster of its lowest-index core neighbour.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    n = len(pts)
    dist = [[math.dist(pts[i], pts[j]) for j in range(n)] for i in range(n)]
    nbrs = [[j for j in range(n) if dist[i][j] <= eps] for i in range(n)]
    core = [len(nbrs[i]) >= min_pts for i in range(n)]

    # reachable[i] = set of points density-reachable from core point i
    reach = {}
    for i in range(n):
        if not core[i]:
            continue
        seen = {i}
        frontier = [i]
        while frontier:
            j = frontier.pop()
            if not core[j]:
                continue
            for q in nbrs[j]:
                if q not in seen:
                    seen.add(q)
                    frontier.append(q)
        reach[i] = seen

    labels = [-1] * n
    cluster_of_core = {}
    next_id = 0
    for i in range(n):
        if core[i] and i not in cluster_of_core:
            for j in reach[i]:
                if core[j]:
                    cluster_of_core[j] = next_id
            next_id += 1
    for i in range(n):
        if core[i]:
            labels[i] = cluster_of_core[i]
        else:
            cores = [q for q in nbrs[i] if core[q]]
            if cores:
                labels[i] = cluster_of_core[min(cores)]
    return labels


def covariance_pca(x):
    """Eigen-decomposition of the explicit m x m matrix X^T X.

    Returns eigenvalues (descending) and unit eigenvectors as rows.
    """
    x = np.asarray(x, dtype=float)
    cov = x.T @ x
    evals, evecs = np.linalg.eig(cov)  # general solver, deliberately not eigh
    evals = evals.real
    evecs = evecs.real
    order = np.argsort(-evals)
    return evals[order], evecs[:, order].T


def error_ratio(x, k, directions):
    """Average squared projection error over average squared norm, for the top-k directions."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(directions[:k])
    err = 0.0
    tot = 0.0
    for row in x:
        approx = sum(np.dot(row, d) * d for d in u) if k else np.zeros_like(row)
        err += float(np.sum((row - approx) ** 2))
        tot += float(np.sum(row ** 2))
    return (err / len(x)) / (tot / len(x))


def kde_1d(grid, data, h):
    """Gaussian KDE on a grid of 1-D locations."""
    grid = np.asarray(grid, dtype=float)
    return np.array([
        sum(math.exp(-((g - p) ** 2) / (2 * h * h)) for p in data) / (len(data) * h)
        for g in grid
    ])


def grid_maxima(grid, values):
    """Strict interior local maxima of a sampled curve."""
    return [grid[i] for i in range(1, len(grid) - 1) if values[i] > values[i - 1] and values[i] > values[i + 1]]


def score_sets(suspects, labels, scenario=None):
    """(tp, fn, fp) by set arithmetic; ``labels`` maps id -> scenario or None."""
    s = set(suspects)
    thieves = {c for c, v in labels.items() if v is not None and (scenario is None or v == scenario)}
    honest = {c for c, v in labels.items() if v is None}
    return len(thieves & s), len(thieves - s), len(honest & s)


def line_losses_kw(powers_kw, segment_ohms, v_nominal):
    """I^2 R losses of a radial chain, tap i fed through segments 0..i."""
    total = 0.0
    for i, r in enumerate(segment_ohms):
        amps = sum(powers_kw[i:]) * 1000.0 / v_nominal
        total += amps * amps * r
    return total / 1000.0


def random_dbscan_instance(rng):
    """Points, eps and min_pts for a DBSCAN instance with n <= 12."""
    n = int(rng.integers(1, 13))
    d = int(rng.integers(1, 4))
    if rng.random() < 0.3:
        # integer grid, so distances hit eps exactly and the closed ball matters
        pts = rng.integers(0, 4, size=(n, d)).astype(float)
        eps = float(rng.integers(1, 3))
    else:
        pts = rng.normal(size=(n, d)) * rng.uniform(0.5, 3)
        eps = float(rng.uniform(0.1, 3.0))
    return pts, eps, int(rng.integers(1, 6))
