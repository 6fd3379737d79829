"""Projection quality metrics.

Eight metric families, each a pure function from (dataset-side structure,
projection-side structure, parameters) to one real score:

local (neighborhood preservation)
    trustworthiness_continuity  higher is better, in [0, 1]
    mrre                        lower is better, >= 0
    neighbor_dissimilarity      lower is better, in [0, 1]
cluster-level (labeled class separation)
    distance_consistency        higher is better, in [0, 1]
    silhouette                  higher is better, in [-1, 1]
    label_trustworthiness       higher is better, in [0, 1]
global (distance / distribution preservation)
    stress                      lower is better, >= 0
    kl_divergence               lower is better, >= 0

``evaluate_all`` scores full ensembles into a dense ScoreTensor, reusing an
optional on-disk cache keyed by projection content.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cache import ScoreCache, projection_fingerprint
from .data import DatasetTable, ProjectionSet, ScoreTensor
from .neighbors import knn_sets, pairwise_distances, rank_matrix, snn_similarity

FAMILIES = (
    "trustworthiness_continuity",
    "mrre",
    "neighbor_dissimilarity",
    "distance_consistency",
    "silhouette",
    "label_trustworthiness",
    "stress",
    "kl_divergence",
)

CATEGORY = {
    "trustworthiness_continuity": "local",
    "mrre": "local",
    "neighbor_dissimilarity": "local",
    "distance_consistency": "cluster_level",
    "silhouette": "cluster_level",
    "label_trustworthiness": "cluster_level",
    "stress": "global",
    "kl_divergence": "global",
}

LOWER_BETTER = {"mrre", "neighbor_dissimilarity", "stress", "kl_divergence"}

_K_FAMILIES = {"trustworthiness_continuity", "mrre", "neighbor_dissimilarity",
               "label_trustworthiness"}
_SIGMA_FAMILIES = {"kl_divergence"}


class MetricError(ValueError):
    """A metric was invoked on inputs it is not defined for."""


@dataclass(frozen=True)
class MetricInstance:
    """A metric family plus its parameters, design category, and orientation."""

    family: str
    params: dict
    category: str
    orientation: str
    id: str

    @property
    def higher_better(self) -> bool:
        return self.orientation == "higher_better"


def metric_instance(family: str, k: int | None = None, sigma: float | None = None) -> MetricInstance:
    """Build a validated MetricInstance with its canonical id."""
    if family not in FAMILIES:
        raise MetricError(f"unknown metric family {family!r}")
    params: dict = {}
    if family in _K_FAMILIES:
        if k is None or k < 1:
            raise MetricError(f"{family} requires a positive k")
        params["k"] = int(k)
        suffix = f"[k={int(k)}]"
    elif family in _SIGMA_FAMILIES:
        if sigma is None or sigma <= 0:
            raise MetricError(f"{family} requires a positive sigma")
        params["sigma"] = float(sigma)
        suffix = f"[sigma={sigma:g}]"
    else:
        if k is not None or sigma is not None:
            raise MetricError(f"{family} takes no parameter")
        suffix = ""
    orientation = "lower_better" if family in LOWER_BETTER else "higher_better"
    return MetricInstance(
        family=family,
        params=params,
        category=CATEGORY[family],
        orientation=orientation,
        id=f"{family}{suffix}",
    )


# The default grid mirrors a parameterized metric catalog: each local family
# at three neighborhood sizes, the Gaussian-kernel divergence at two
# bandwidths, and the parameterless families once (14 instances).
DEFAULT_KNN_SIZES = (5, 10, 25)
DEFAULT_KL_SIGMAS = (0.1, 1.0)
DEFAULT_FAMILIES = (
    "trustworthiness_continuity",
    "mrre",
    "neighbor_dissimilarity",
    "distance_consistency",
    "silhouette",
    "stress",
    "kl_divergence",
)


def default_catalog(
    knn_sizes=DEFAULT_KNN_SIZES,
    kl_sigmas=DEFAULT_KL_SIGMAS,
    families=DEFAULT_FAMILIES,
) -> list[MetricInstance]:
    """The configurable metric grid; the default is 14 instances."""
    catalog = []
    for family in families:
        if family in _K_FAMILIES:
            catalog.extend(metric_instance(family, k=k) for k in knn_sizes)
        elif family in _SIGMA_FAMILIES:
            catalog.extend(metric_instance(family, sigma=s) for s in kl_sigmas)
        else:
            catalog.append(metric_instance(family))
    return catalog


def catalog_to_json(catalog: list[MetricInstance]) -> list[dict]:
    return [
        {
            "id": m.id,
            "family": m.family,
            "params": m.params,
            "category": m.category,
            "orientation": m.orientation,
        }
        for m in catalog
    ]


# ---------------------------------------------------------------------------
# Metric functions
# ---------------------------------------------------------------------------

def trustworthiness_continuity(data_rank: np.ndarray, proj_rank: np.ndarray, k: int) -> float:
    """Harmonic mean of trustworthiness and continuity at neighborhood size k.

    Trustworthiness penalizes false neighbors (points inside the projection's
    k-NN sets but outside the data's), continuity penalizes missing ones; both
    use the classic 1 - 2/(nk(2n-3k-1)) * sum(rank - k) normalization.
    """
    n = data_rank.shape[0]
    if k < 1 or 2 * n - 3 * k - 1 <= 0:
        raise MetricError(f"k={k} too large for n={n} (need 2n-3k-1 > 0)")
    norm = 2.0 / (n * k * (2 * n - 3 * k - 1))
    in_data = (data_rank >= 1) & (data_rank <= k)
    in_proj = (proj_rank >= 1) & (proj_rank <= k)
    t_pen = float(np.sum((data_rank - k)[in_proj & ~in_data & (data_rank > 0)]))
    c_pen = float(np.sum((proj_rank - k)[in_data & ~in_proj & (proj_rank > 0)]))
    t = 1.0 - norm * t_pen
    c = 1.0 - norm * c_pen
    if t + c == 0.0:
        return 0.0
    return 2.0 * t * c / (t + c)


def mrre(data_rank: np.ndarray, proj_rank: np.ndarray, k: int) -> float:
    """Mean relative rank error: average of the false- and missing-neighbor sums."""
    n = data_rank.shape[0]
    if not 1 <= k <= n - 2:
        raise MetricError(f"k must be in [1, n-2] = [1, {n - 2}], got {k}")
    ls = np.arange(1, k + 1, dtype=float)
    c_k = n * float(np.sum(np.abs(n - 2 * ls + 1) / ls))
    dr = data_rank.astype(float)
    pr = proj_rank.astype(float)
    in_data = (data_rank >= 1) & (data_rank <= k)
    in_proj = (proj_rank >= 1) & (proj_rank <= k)
    err = np.abs(dr - pr)
    false_sum = float(np.sum(err[in_proj] / dr[in_proj]))
    missing_sum = float(np.sum(err[in_data] / pr[in_data]))
    return 0.5 * (false_sum + missing_sum) / c_k


def stress(data_dist: np.ndarray, proj_dist: np.ndarray) -> float:
    """Normalized RMS discrepancy between the two distance matrices."""
    if data_dist.shape != proj_dist.shape:
        raise MetricError("distance matrices must have matching shapes")
    iu = np.triu_indices(data_dist.shape[0], k=1)
    d_hi = data_dist[iu]
    d_lo = proj_dist[iu]
    denom = float(np.sum(d_hi**2))
    if denom == 0.0:
        raise MetricError("degenerate distances: all data points coincident")
    return float(np.sqrt(np.sum((d_hi - d_lo) ** 2) / denom))


def _conditional_probs(dist: np.ndarray, sigma: float) -> np.ndarray:
    max_d = float(dist.max())
    if max_d == 0.0:
        raise MetricError("degenerate distances: all points coincident")
    scaled = dist / max_d
    p = np.exp(-(scaled**2) / (2.0 * sigma * sigma))
    np.fill_diagonal(p, 0.0)
    row_sums = p.sum(axis=1)
    if np.any(row_sums == 0.0):
        raise MetricError(f"sigma={sigma} underflows the Gaussian kernel")
    return p / row_sums[:, None]


def kl_divergence(data_dist: np.ndarray, proj_dist: np.ndarray, sigma: float) -> float:
    """Mean row-wise KL divergence between Gaussian neighbor distributions.

    Distances in each space are first divided by their own maximum so the
    bandwidth sigma is comparable across datasets of different scales.
    """
    if sigma <= 0:
        raise MetricError("sigma must be positive")
    if data_dist.shape != proj_dist.shape:
        raise MetricError("distance matrices must have matching shapes")
    p = _conditional_probs(data_dist, sigma)
    q = _conditional_probs(proj_dist, sigma)
    mask = p > 0
    if np.any(q[mask] == 0.0):
        raise MetricError("projection kernel underflow: q=0 where p>0")
    terms = np.zeros_like(p)
    terms[mask] = p[mask] * (np.log(p[mask]) - np.log(q[mask]))
    return float(terms.sum() / p.shape[0])


def distance_consistency(proj_coords: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of points whose nearest class centroid (in the projection) is their own.

    Distance ties are broken toward the point's own class.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise MetricError("cluster-level metric requires >=2 classes")
    centroids = np.stack([proj_coords[labels == c].mean(axis=0) for c in classes])
    diff = proj_coords[:, None, :] - centroids[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    class_index = np.searchsorted(classes, labels)
    own = d2[np.arange(len(labels)), class_index]
    d2_other = d2.copy()
    d2_other[np.arange(len(labels)), class_index] = np.inf
    return float(np.mean(own <= d2_other.min(axis=1)))


def silhouette(proj_dist: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette of the projection with class labels as clusters.

    s(i) = (b - a) / max(a, b); points in singleton classes contribute 0, as
    does the degenerate a = b = 0 case.
    """
    labels = np.asarray(labels)
    classes = np.unique(labels)
    if classes.size < 2:
        raise MetricError("cluster-level metric requires >=2 classes")
    n = proj_dist.shape[0]
    sums = np.stack([proj_dist[:, labels == c].sum(axis=1) for c in classes], axis=1)
    counts = np.array([(labels == c).sum() for c in classes])
    class_index = np.searchsorted(classes, labels)

    s = np.zeros(n, dtype=float)
    for i in range(n):
        ci = class_index[i]
        if counts[ci] == 1:
            continue  # singleton class: s(i) = 0 by convention
        a = sums[i, ci] / (counts[ci] - 1)
        b = np.inf
        for cj in range(classes.size):
            if cj != ci:
                b = min(b, sums[i, cj] / counts[cj])
        denom = max(a, b)
        s[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(s.mean())


def label_trustworthiness(
    data_rank: np.ndarray, proj_rank: np.ndarray, labels: np.ndarray, k: int
) -> float:
    """One minus the mean clamped loss of k-NN label purity from data to projection."""
    labels = np.asarray(labels)
    if np.unique(labels).size < 2:
        raise MetricError("cluster-level metric requires >=2 classes")
    n = data_rank.shape[0]
    if not 1 <= k <= n - 2:
        raise MetricError(f"k must be in [1, n-2] = [1, {n - 2}], got {k}")
    same = labels[:, None] == labels[None, :]
    f_hd = ((data_rank >= 1) & (data_rank <= k) & same).sum(axis=1) / k
    f_ld = ((proj_rank >= 1) & (proj_rank <= k) & same).sum(axis=1) / k
    return float(1.0 - np.mean(np.maximum(0.0, f_hd - f_ld)))


def neighbor_dissimilarity(snn_data: np.ndarray, snn_proj: np.ndarray) -> float:
    """Mean absolute difference between the two SNN similarity matrices (i < j)."""
    if snn_data.shape != snn_proj.shape:
        raise MetricError("SNN matrices must have matching shapes")
    n = snn_data.shape[0]
    iu = np.triu_indices(n, k=1)
    return float(np.abs(snn_data[iu] - snn_proj[iu]).mean())


# ---------------------------------------------------------------------------
# Ensemble evaluation
# ---------------------------------------------------------------------------

def validate_params(catalog: list[MetricInstance], data: DatasetTable) -> None:
    """Check every instance is defined for this dataset's size and labels."""
    n = data.n
    for inst in catalog:
        k = inst.params.get("k")
        if inst.family == "trustworthiness_continuity":
            if 2 * n - 3 * k - 1 <= 0:
                raise MetricError(f"{inst.id}: k too large for dataset {data.id!r} (n={n})")
        elif k is not None and k > n - 2:
            raise MetricError(f"{inst.id}: k too large for dataset {data.id!r} (n={n})")
        if inst.category == "cluster_level" and data.n_classes() < 2:
            raise MetricError(f"{inst.id}: dataset {data.id!r} has fewer than 2 classes")


def _dataset_context(data: DatasetTable, catalog: list[MetricInstance]) -> dict:
    """Precompute the data-side structures shared by every projection."""
    ctx: dict = {"labels": data.labels, "instances": list(catalog)}
    families = {m.family for m in catalog}
    need_dist = bool(families & {"stress", "kl_divergence"})
    need_rank = bool(families & {"trustworthiness_continuity", "mrre",
                                 "neighbor_dissimilarity", "label_trustworthiness"})
    dist = pairwise_distances(data.points) if (need_dist or need_rank) else None
    ctx["data_dist"] = dist if need_dist else None
    rank = rank_matrix(dist) if need_rank else None
    ctx["data_rank"] = rank
    snn_ks = sorted({m.params["k"] for m in catalog if m.family == "neighbor_dissimilarity"})
    ctx["data_snn"] = {k: snn_similarity(knn_sets(rank, k)) for k in snn_ks}
    return ctx


def _score_one_projection(ctx: dict, coords: np.ndarray, wanted: list[str]) -> dict[str, float]:
    """Score one projection under the wanted metric ids. Pure; safe to run in workers."""
    labels = ctx["labels"]
    instances = {m.id: m for m in ctx["instances"]}
    need = [instances[mid] for mid in wanted]
    families = {m.family for m in need}

    rank_families = families & {"trustworthiness_continuity", "mrre",
                                "neighbor_dissimilarity", "label_trustworthiness"}
    proj_dist = None
    if rank_families or families & {"stress", "kl_divergence", "silhouette"}:
        proj_dist = pairwise_distances(coords)
    proj_rank = rank_matrix(proj_dist) if rank_families else None
    proj_snn = {
        k: snn_similarity(knn_sets(proj_rank, k))
        for k in sorted({m.params["k"] for m in need if m.family == "neighbor_dissimilarity"})
    }

    out = {}
    for inst in need:
        if inst.family == "trustworthiness_continuity":
            v = trustworthiness_continuity(ctx["data_rank"], proj_rank, inst.params["k"])
        elif inst.family == "mrre":
            v = mrre(ctx["data_rank"], proj_rank, inst.params["k"])
        elif inst.family == "neighbor_dissimilarity":
            k = inst.params["k"]
            v = neighbor_dissimilarity(ctx["data_snn"][k], proj_snn[k])
        elif inst.family == "stress":
            v = stress(ctx["data_dist"], proj_dist)
        elif inst.family == "kl_divergence":
            v = kl_divergence(ctx["data_dist"], proj_dist, inst.params["sigma"])
        elif inst.family == "distance_consistency":
            v = distance_consistency(coords, labels)
        elif inst.family == "silhouette":
            v = silhouette(proj_dist, labels)
        elif inst.family == "label_trustworthiness":
            v = label_trustworthiness(ctx["data_rank"], proj_rank, labels, inst.params["k"])
        else:  # pragma: no cover
            raise MetricError(f"unhandled family {inst.family}")
        out[inst.id] = float(v)
    return out


def _pool_task(args):
    ctx, coords, wanted = args
    return _score_one_projection(ctx, coords, wanted)


def evaluate_all(
    datasets: list[DatasetTable],
    projection_sets: dict[str, ProjectionSet],
    catalog: list[MetricInstance],
    cache: ScoreCache | None = None,
    threads: int = 1,
    stats: dict | None = None,
) -> ScoreTensor:
    """Score every (dataset, projection, metric) triple into a dense tensor.

    Cached scores are reused when the projection content matches; the result
    is deterministic and independent of worker scheduling.
    """
    computed = 0
    cache_hits = 0
    scores: dict[tuple[str, int, str], float] = {}
    counts: dict[str, int] = {}

    for data in datasets:
        pset = projection_sets[data.id]
        counts[data.id] = len(pset)
        validate_params(catalog, data)
        for proj in pset:
            if proj.n != data.n:
                raise MetricError(
                    f"projection {proj.index} of {data.id!r} has {proj.n} rows, "
                    f"dataset has {data.n}"
                )

        fingerprints = [
            projection_fingerprint(p.coords, data.points, data.labels) for p in pset
        ]
        todo: dict[int, list[str]] = {}
        for p, fp in enumerate(fingerprints):
            missing = []
            for inst in catalog:
                value = cache.get(data.id, inst.id, fp) if cache is not None else None
                if value is None:
                    missing.append(inst.id)
                else:
                    scores[(data.id, p, inst.id)] = value
                    cache_hits += 1
            if missing:
                todo[p] = missing

        if todo:
            ctx = _dataset_context(data, catalog)
            tasks = [(ctx, pset[p].coords, wanted) for p, wanted in sorted(todo.items())]
            if threads > 1 and len(tasks) > 1:
                with ProcessPoolExecutor(max_workers=threads) as pool:
                    chunk = max(1, len(tasks) // (threads * 4))
                    results = list(pool.map(_pool_task, tasks, chunksize=chunk))
            else:
                results = [_pool_task(t) for t in tasks]

            fresh: dict[str, dict[str, float]] = {}
            for (p, _wanted), values in zip(sorted(todo.items()), results):
                for mid, v in values.items():
                    try:
                        _check_range(mid, v)
                    except MetricError as exc:
                        raise MetricError(
                            f"{mid} on {data.id!r} projection {p}: {exc}"
                        ) from exc
                    scores[(data.id, p, mid)] = v
                    computed += 1
                    fresh.setdefault(mid, {})[fingerprints[p]] = v
            if cache is not None:
                for mid, items in fresh.items():
                    cache.put_many(data.id, mid, items)

    if stats is not None:
        stats["computed"] = computed
        stats["cache_hits"] = cache_hits
    return ScoreTensor(
        datasets=[d.id for d in datasets],
        projections_per_dataset=counts,
        metrics=[m.id for m in catalog],
        scores=scores,
    )


_RANGES = {
    "trustworthiness_continuity": (0.0, 1.0),
    "distance_consistency": (0.0, 1.0),
    "label_trustworthiness": (0.0, 1.0),
    "neighbor_dissimilarity": (0.0, 1.0),
    "silhouette": (-1.0, 1.0),
    "mrre": (0.0, np.inf),
    "stress": (0.0, np.inf),
    "kl_divergence": (0.0, np.inf),
}


def _check_range(metric_id: str, value: float) -> None:
    family = metric_id.split("[", 1)[0]
    lo, hi = _RANGES[family]
    if not np.isfinite(value):
        raise MetricError(f"non-finite score {value}")
    # small slack for floating error at the boundaries
    if value < lo - 1e-9 or value > hi + 1e-9:
        raise MetricError(f"score {value} outside [{lo}, {hi}]")
