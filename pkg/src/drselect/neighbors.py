"""Distance matrices, neighbor ranks, k-NN sets, and shared-neighbor similarity.

These are the primitives every quality metric consumes.  Everything is exact
(full sorts, no approximate indices) and deterministic: rank ties are broken
by ascending point index.

Conventions: ``dist`` is an n x n symmetric Euclidean matrix with zero
diagonal.  ``ranks`` is n x n where ranks[i][j] is the 1-based rank of j among
all points != i sorted by distance from i; the diagonal holds the sentinel 0.
``knn`` is an (n, k) integer array whose row i lists N_k(i) in rank order.
"""
from __future__ import annotations

import numpy as np


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    """Euclidean distance matrix, computed once per unordered pair (exactly symmetric)."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < 2:
        raise ValueError("pairwise_distances expects an n x d matrix with n >= 2")
    if not np.all(np.isfinite(points)):
        raise ValueError("pairwise_distances: non-finite input")
    n = points.shape[0]
    dist = np.zeros((n, n), dtype=float)
    for i in range(n - 1):
        diff = points[i + 1 :] - points[i]
        row = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        dist[i, i + 1 :] = row
        dist[i + 1 :, i] = row
    return dist


def rank_matrix(dist: np.ndarray) -> np.ndarray:
    """Row-wise neighbor ranks (1..n-1), ties broken by ascending point index."""
    dist = np.asarray(dist, dtype=float)
    n = dist.shape[0]
    ranks = np.zeros((n, n), dtype=np.int64)
    idx = np.arange(n)
    for i in range(n):
        others = idx[idx != i]
        # lexsort: primary key distance, secondary key point index
        order = others[np.lexsort((others, dist[i, others]))]
        ranks[i, order] = np.arange(1, n, dtype=np.int64)
    return ranks


def knn_sets(ranks: np.ndarray, k: int) -> np.ndarray:
    """N_k(i) = {j : ranks[i][j] <= k}, returned as an (n, k) array in rank order."""
    ranks = np.asarray(ranks)
    n = ranks.shape[0]
    if not 1 <= k <= n - 2:
        raise ValueError(f"k must be in [1, n-2] = [1, {n - 2}], got {k}")
    knn = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        row = ranks[i]
        members = np.nonzero((row >= 1) & (row <= k))[0]
        knn[i] = members[np.argsort(row[members])]
    return knn


def snn_similarity(knn: np.ndarray, n: int | None = None) -> np.ndarray:
    """Rank-weighted shared-nearest-neighbor similarity in [0, 1].

    s_ij = sum over shared neighbors m of (k+1-rho_i(m)) * (k+1-rho_j(m)),
    normalized by sum_{l=1..k} l^2; rho_i(m) is m's position (1..k) within
    N_k(i).  Identical ordered neighborhoods give 1, disjoint ones give 0;
    the diagonal is exactly 1.
    """
    knn = np.asarray(knn)
    n_points = knn.shape[0] if n is None else n
    k = knn.shape[1]
    weights = np.zeros((n_points, n_points), dtype=float)
    w = np.arange(k, 0, -1, dtype=float)  # k+1-rho for rho = 1..k
    rows = np.repeat(np.arange(n_points), k)
    weights[rows, knn.ravel()] = np.tile(w, n_points)
    z = k * (k + 1) * (2 * k + 1) / 6.0
    sim = (weights @ weights.T) / z
    np.fill_diagonal(sim, 1.0)
    return sim
