"""Metric behavioral analysis: correlation, clustering, representatives, elbow.

The workflow: rank each dataset's projections under every metric
(orientation-normalized, rank 1 = best), correlate metric pairs with
Spearman's rho per dataset, average across datasets into a similarity matrix,
cluster the metrics with average linkage on 1 - similarity, and pick each
cluster's most central member as its representative.  The diversity of a
selected set and a Kneedle elbow over the diversity-vs-k curve decide how
many metrics to keep.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import ScoreTensor, fractional_ranks, quality_ranks
from .fileio import atomic_write_text, fmt_float
from .metrics import MetricInstance


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Spearman correlation
# ---------------------------------------------------------------------------

def spearman_rho_flagged(a, b) -> tuple[float, bool]:
    """Spearman's rho as Pearson correlation of fractional ranks.

    Returns (rho, constant_input): a constant sequence has no defined rank
    correlation, so rho is reported as 0.0 with the flag set.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    if a.size < 2:
        raise ValueError("need at least 2 observations")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("non-finite input")
    ra = fractional_ranks(a) - (a.size + 1) / 2.0
    rb = fractional_ranks(b) - (b.size + 1) / 2.0
    va = float(ra @ ra)
    vb = float(rb @ rb)
    if va == 0.0 or vb == 0.0:
        return 0.0, True
    return float((ra @ rb) / math.sqrt(va * vb)), False


def spearman_rho(a, b) -> float:
    """Tie-safe Spearman rank correlation in [-1, 1]; 0 for constant input."""
    return spearman_rho_flagged(a, b)[0]


# ---------------------------------------------------------------------------
# Similarity matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimilarityMatrix:
    """Metric-by-metric Spearman correlations averaged over datasets.

    `per_dataset` keeps each dataset's correlation slice for audit, and
    `constant_flags` records (dataset -> metric ids) whose scores were
    constant there (those pairs contributed rho = 0).
    """

    ids: tuple
    values: np.ndarray
    per_dataset: dict = field(default_factory=dict)
    constant_flags: dict = field(default_factory=dict)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "ids", tuple(self.ids))
        m = len(self.ids)
        if vals.shape != (m, m):
            raise AnalysisError(f"expected {m}x{m} values, got {vals.shape}")
        if not np.allclose(vals, vals.T):
            raise AnalysisError("similarity matrix must be symmetric")
        if np.any(vals < -1.0 - 1e-12) or np.any(vals > 1.0 + 1e-12):
            raise AnalysisError("similarity entries must lie in [-1, 1]")

    def index(self, metric_id: str) -> int:
        return self.ids.index(metric_id)

    def value(self, a: str, b: str) -> float:
        return float(self.values[self.index(a), self.index(b)])

    def to_csv(self, path) -> None:
        lines = ["metric," + ",".join(self.ids)]
        for i, mid in enumerate(self.ids):
            lines.append(mid + "," + ",".join(fmt_float(v) for v in self.values[i]))
        atomic_write_text(path, "\n".join(lines) + "\n")

    def to_json_obj(self) -> dict:
        return {
            "ids": list(self.ids),
            "values": [[float(v) for v in row] for row in self.values],
            "per_dataset": {
                ds: [[float(v) for v in row] for row in mat]
                for ds, mat in self.per_dataset.items()
            },
            "constant_flags": {ds: sorted(ms) for ds, ms in self.constant_flags.items()},
        }


def metric_rank_table(tensor: ScoreTensor, catalog: list[MetricInstance]) -> dict[str, np.ndarray]:
    """Per dataset, the (n_metrics x n_projections) matrix of quality ranks."""
    table = {}
    for ds in tensor.datasets:
        rows = [
            quality_ranks(tensor.slice(ds, inst.id), inst.higher_better)
            for inst in catalog
        ]
        table[ds] = np.vstack(rows)
    return table


def metric_similarity_matrix(tensor: ScoreTensor, catalog: list[MetricInstance]) -> SimilarityMatrix:
    """Average per-dataset Spearman correlation between metric quality rankings."""
    ids = [inst.id for inst in catalog]
    missing = [mid for mid in ids if mid not in tensor.metrics]
    if missing:
        raise AnalysisError(f"tensor lacks scores for metrics {missing}")
    for ds in tensor.datasets:
        if tensor.projections_per_dataset[ds] < 2:
            raise AnalysisError(f"dataset {ds!r} has fewer than 2 projections")
    m = len(ids)
    ranks = metric_rank_table(tensor, catalog)
    per_dataset = {}
    constant_flags = {}
    acc = np.zeros((m, m), dtype=float)
    for ds in tensor.datasets:
        mat = np.eye(m)
        rs = ranks[ds]
        flagged = set()
        for i in range(m):
            for j in range(i + 1, m):
                rho, const = spearman_rho_flagged(rs[i], rs[j])
                mat[i, j] = mat[j, i] = rho
                if const:
                    for row in (i, j):
                        if np.all(rs[row] == rs[row][0]):
                            flagged.add(ids[row])
        per_dataset[ds] = mat
        if flagged:
            constant_flags[ds] = flagged
        acc += mat
    values = acc / len(tensor.datasets)
    np.fill_diagonal(values, 1.0)
    return SimilarityMatrix(
        ids=tuple(ids), values=values, per_dataset=per_dataset,
        constant_flags=constant_flags,
    )


# ---------------------------------------------------------------------------
# Hierarchical clustering (UPGMA)
# ---------------------------------------------------------------------------

def _cluster_distance(dist: np.ndarray, members_a, members_b) -> float:
    """Average linkage distance, accumulated over sorted leaf pairs.

    The fixed accumulation order makes the value bit-reproducible across
    implementations, which the dual-route tests rely on.
    """
    pairs = sorted((x, y) if x < y else (y, x) for x in members_a for y in members_b)
    total = 0.0
    for x, y in pairs:
        total += dist[x, y]
    return total / len(pairs)


@dataclass(frozen=True)
class Dendrogram:
    """UPGMA merge tree: leaves 0..m-1, merge t creates node m+t.

    Each merge record is (left node, right node, height, merged size) with
    left < right.
    """

    leaves: tuple
    merges: tuple

    def __post_init__(self):
        object.__setattr__(self, "leaves", tuple(self.leaves))
        object.__setattr__(self, "merges", tuple(tuple(m) for m in self.merges))
        if len(self.merges) != len(self.leaves) - 1:
            raise AnalysisError("merge list must have m-1 entries")

    def leaf_order(self) -> list[str]:
        """Leaf ids in dendrogram order (left-to-right DFS from the root)."""
        m = len(self.leaves)
        children = {m + t: (mg[0], mg[1]) for t, mg in enumerate(self.merges)}
        order = []
        stack = [m + len(self.merges) - 1]
        while stack:
            node = stack.pop()
            if node < m:
                order.append(node)
            else:
                left, right = children[node]
                stack.append(right)
                stack.append(left)
        return [self.leaves[i] for i in order]

    def to_json_obj(self) -> dict:
        return {
            "leaves": list(self.leaves),
            "merges": [
                {"left": int(a), "right": int(b), "height": float(h), "size": int(s)}
                for a, b, h, s in self.merges
            ],
        }


def hier_cluster(sim: SimilarityMatrix) -> Dendrogram:
    """Average-linkage agglomeration over distance 1 - similarity.

    Ties in closest-pair selection break toward the smallest (left, right)
    node-id pair, making the merge sequence fully deterministic.
    """
    m = len(sim.ids)
    if m < 2:
        raise AnalysisError("need at least 2 metrics to cluster")
    dist = 1.0 - sim.values
    members: dict[int, tuple] = {i: (i,) for i in range(m)}
    cache: dict[tuple[int, int], float] = {}

    def pair_dist(a: int, b: int) -> float:
        key = (a, b) if a < b else (b, a)
        if key not in cache:
            cache[key] = _cluster_distance(dist, members[a], members[b])
        return cache[key]

    active = list(range(m))
    merges = []
    next_id = m
    while len(active) > 1:
        best_d, best_pair = np.inf, None
        for ai in range(len(active)):
            for bi in range(ai + 1, len(active)):
                a, b = active[ai], active[bi]
                dv = pair_dist(a, b)
                if dv < best_d or (dv == best_d and (a, b) < best_pair):
                    best_d, best_pair = dv, (a, b)
        a, b = best_pair
        members[next_id] = tuple(sorted(members[a] + members[b]))
        merges.append((a, b, best_d, len(members[next_id])))
        active = [x for x in active if x not in (a, b)] + [next_id]
        active.sort()
        next_id += 1
    return Dendrogram(leaves=tuple(sim.ids), merges=tuple(merges))


# ---------------------------------------------------------------------------
# Cutting, singleton removal, representatives
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricClustering:
    """A cut of the dendrogram: cluster assignments plus derived selections."""

    k_requested: int
    assignments: dict
    singletons_removed: frozenset = frozenset()
    representatives: dict = field(default_factory=dict)

    @property
    def k_effective(self) -> int:
        return len(set(self.assignments.values()))

    def clusters(self) -> dict[int, list[str]]:
        out: dict[int, list[str]] = {}
        for mid, cid in self.assignments.items():
            out.setdefault(cid, []).append(mid)
        return {cid: sorted(ms) for cid, ms in sorted(out.items())}

    def to_json_obj(self) -> dict:
        return {
            "k_requested": self.k_requested,
            "k_effective": self.k_effective,
            "clusters": {str(c): ms for c, ms in self.clusters().items()},
            "singletons_removed": sorted(self.singletons_removed),
            "representatives": {str(c): r for c, r in sorted(self.representatives.items())},
        }


def cut_to_k(dend: Dendrogram, k: int) -> MetricClustering:
    """Undo the last k-1 merges: apply the first m-k merges and read off clusters."""
    m = len(dend.leaves)
    if not 1 <= k <= m:
        raise AnalysisError(f"k must be in [1, {m}], got {k}")
    members: dict[int, tuple] = {i: (i,) for i in range(m)}
    active = set(range(m))
    for t in range(m - k):
        a, b, _h, _s = dend.merges[t]
        node = m + t
        members[node] = tuple(sorted(members[a] + members[b]))
        active.discard(a)
        active.discard(b)
        active.add(node)
    clusters = sorted((members[node] for node in active), key=lambda ms: ms[0])
    assignments = {}
    for cid, ms in enumerate(clusters):
        for leaf in ms:
            assignments[dend.leaves[leaf]] = cid
    return MetricClustering(k_requested=k, assignments=assignments)


def drop_singletons(clustering: MetricClustering) -> MetricClustering:
    """Remove size-1 clusters as outliers; remaining clusters re-index stably."""
    clusters = clustering.clusters()
    keep = [cid for cid, ms in clusters.items() if len(ms) > 1]
    if not keep:
        raise AnalysisError("no non-singleton clusters")
    removed = {ms[0] for cid, ms in clusters.items() if len(ms) == 1}
    assignments = {}
    for new_cid, cid in enumerate(keep):
        for mid in clusters[cid]:
            assignments[mid] = new_cid
    return MetricClustering(
        k_requested=clustering.k_requested,
        assignments=assignments,
        singletons_removed=frozenset(clustering.singletons_removed | removed),
    )


def select_representatives(clustering: MetricClustering, sim: SimilarityMatrix) -> MetricClustering:
    """Per cluster, pick the member with the highest mean similarity to the rest.

    A singleton cluster represents itself; ties break toward the
    lexicographically smallest metric id.
    """
    representatives = {}
    for cid, members in clustering.clusters().items():
        if len(members) == 1:
            representatives[cid] = members[0]
            continue
        best_id, best_avg = None, -np.inf
        for mid in sorted(members):
            others = [sim.value(mid, other) for other in members if other != mid]
            avg = float(np.mean(others))
            if avg > best_avg:
                best_id, best_avg = mid, avg
        representatives[cid] = best_id
    return MetricClustering(
        k_requested=clustering.k_requested,
        assignments=dict(clustering.assignments),
        singletons_removed=clustering.singletons_removed,
        representatives=representatives,
    )


# ---------------------------------------------------------------------------
# Diversity and the elbow
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiversityReport:
    """Per-metric nearest-neighbor dissimilarity within a selected set."""

    k: int
    ind: dict
    d_total: float
    d_norm: float


def diversity(selected, sim: SimilarityMatrix) -> DiversityReport:
    """Ind(M_i) = min_{j != i} (1 - R_ij) over the selected set; D = sum, D_norm = D/k."""
    selected = sorted(set(selected))
    if len(selected) < 2:
        raise AnalysisError("diversity needs at least 2 selected metrics")
    idx = [sim.index(s) for s in selected]
    sub = sim.values[np.ix_(idx, idx)]
    ind = {}
    for pos, mid in enumerate(selected):
        others = np.delete(sub[pos], pos)
        ind[mid] = float(np.min(1.0 - others))
    d_total = float(sum(ind.values()))
    return DiversityReport(k=len(selected), ind=ind, d_total=d_total,
                           d_norm=d_total / len(selected))


def kneedle_knee(xs, ys, sensitivity: float = 1.0) -> float | None:
    """Kneedle for a concave-increasing curve; returns the knee's x or None.

    Min-max normalize both axes, form the difference curve y_d = y_n - x_n,
    and fire the first local maximum whose difference curve later drops below
    its threshold y_d - S * mean(dx) before the next local maximum.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError("xs and ys must be 1-D of equal length")
    n = xs.size
    if n < 3:
        raise ValueError("need at least 3 points")
    if np.any(np.diff(xs) <= 0):
        raise ValueError("xs must be strictly increasing")
    x_n = (xs - xs[0]) / (xs[-1] - xs[0])
    y_span = float(ys.max() - ys.min())
    y_n = (ys - ys.min()) / y_span if y_span > 0 else np.zeros_like(ys)
    y_d = y_n - x_n
    maxima = [
        i for i in range(1, n - 1) if y_d[i] > y_d[i - 1] and y_d[i] >= y_d[i + 1]
    ]
    if not maxima:
        return None
    mean_dx = float(np.mean(np.diff(x_n)))
    maxima_set = set(maxima)
    for i in maxima:
        threshold = y_d[i] - sensitivity * mean_dx
        for j in range(i + 1, n):
            if j in maxima_set:
                break
            if y_d[j] < threshold:
                return float(xs[i])
    return None


@dataclass(frozen=True)
class ElbowPoint:
    k: int
    n_representatives: int
    d_total: float
    d_norm: float
    representatives: tuple


@dataclass(frozen=True)
class OptimalK:
    """Chosen cluster count plus the diversity curve behind the choice."""

    k: int
    knee: float | None
    no_knee: bool
    curve: tuple
    skipped: tuple


def choose_optimal_k(
    sim: SimilarityMatrix,
    k_range: tuple[int, int],
    singleton_policy: str = "drop",
    sensitivity: float = 1.0,
) -> OptimalK:
    """Sweep k, compute representative-set diversity, and pick k just past the knee.

    For each k: cut the dendrogram, drop singleton clusters (unless every
    cluster is a singleton, in which case there is no outlier structure and
    all are kept), select representatives, and record the diversity of the
    representative set.  Kneedle runs on the rising-then-flat total-diversity
    curve; the chosen k is knee + 1 clamped to the range.  When no knee fires,
    the k maximizing D_norm is returned with the no-knee flag set.
    """
    k_min, k_max = int(k_range[0]), int(k_range[1])
    m = len(sim.ids)
    if not 2 <= k_min <= k_max <= m:
        raise AnalysisError(f"k range [{k_min}, {k_max}] invalid for {m} metrics")
    dend = hier_cluster(sim)
    curve, skipped = [], []
    for k in range(k_min, k_max + 1):
        clustering = cut_to_k(dend, k)
        if singleton_policy == "drop":
            sizes = [len(ms) for ms in clustering.clusters().values()]
            if any(s > 1 for s in sizes):
                clustering = drop_singletons(clustering)
        elif singleton_policy != "keep":
            raise AnalysisError(f"unknown singleton policy {singleton_policy!r}")
        clustering = select_representatives(clustering, sim)
        reps = tuple(sorted(clustering.representatives.values()))
        if len(reps) < 2:
            skipped.append((k, "fewer than 2 representatives"))
            continue
        report = diversity(reps, sim)
        curve.append(ElbowPoint(k, len(reps), report.d_total, report.d_norm, reps))
    if not curve:
        raise AnalysisError("no k in range yields at least 2 representatives")
    knee = None
    if len(curve) >= 3:
        knee = kneedle_knee([p.k for p in curve], [p.d_total for p in curve], sensitivity)
    if knee is None:
        best = max(curve, key=lambda p: (p.d_norm, -p.k))
        return OptimalK(k=best.k, knee=None, no_knee=True,
                        curve=tuple(curve), skipped=tuple(skipped))
    target = min(max(int(knee) + 1, k_min), k_max)
    valid_ks = [p.k for p in curve]
    chosen = next((k for k in valid_ks if k >= target), valid_ks[-1])
    return OptimalK(k=chosen, knee=float(knee), no_knee=False,
                    curve=tuple(curve), skipped=tuple(skipped))
