"""Rank-stability experiments over metric selection strategies.

A selection strategy repeatedly draws sets of k metrics; each set produces one
aggregated quality ranking of a dataset's projections; the stability of a
strategy is the mean pairwise Spearman correlation among those rankings,
averaged over datasets.  A biased strategy emphasizes different structural
characteristics from draw to draw, so its rankings fluctuate and stability
drops.

Strategies: `random` samples uniformly without replacement; `class_based`
spreads slots across the three design categories as evenly as capacity
allows, assigning remainder slots to uniformly chosen categories;
`cluster_based` picks one member from each behavioral cluster.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .analysis import MetricClustering, metric_rank_table, spearman_rho
from .data import ScoreTensor, fractional_ranks, quality_ranks
from .metrics import MetricInstance

CATEGORIES = ("local", "cluster_level", "global")
STRATEGY_KINDS = ("random", "class_based", "cluster_based")


class ExperimentError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str
    k: int
    seed: int
    clustering: MetricClustering | None = None

    def __post_init__(self):
        if self.kind not in STRATEGY_KINDS:
            raise ExperimentError(f"unknown strategy kind {self.kind!r}")
        if self.k < 1:
            raise ExperimentError(f"k must be >= 1, got {self.k}")
        if self.kind == "cluster_based":
            if self.clustering is None:
                raise ExperimentError("cluster_based requires a clustering")
            if self.clustering.k_effective != self.k:
                raise ExperimentError(
                    f"cluster_based requires {self.k} retained clusters, "
                    f"clustering has {self.clustering.k_effective}"
                )


def draw_metric_set(strategy: SelectionStrategy, catalog: list[MetricInstance]) -> tuple[str, ...]:
    """Draw one metric id set of size k; deterministic given the strategy seed."""
    ids = [m.id for m in catalog]
    if strategy.kind != "cluster_based" and strategy.k > len(ids):
        raise ExperimentError(f"k={strategy.k} exceeds catalog size {len(ids)}")
    rng = np.random.default_rng(strategy.seed)

    if strategy.kind == "random":
        picks = rng.choice(len(ids), size=strategy.k, replace=False)
        return tuple(sorted(ids[i] for i in picks))

    if strategy.kind == "class_based":
        pools = {c: [m.id for m in catalog if m.category == c] for c in CATEGORIES}
        if any(not pools[c] for c in CATEGORIES):
            missing = [c for c in CATEGORIES if not pools[c]]
            raise ExperimentError(f"class_based requires all categories; missing {missing}")
        slots = {c: strategy.k // 3 for c in CATEGORIES}
        for e in rng.choice(3, size=strategy.k % 3, replace=False):
            slots[CATEGORIES[e]] += 1
        # Redistribute slots a small category cannot absorb to those with room.
        excess = 0
        for c in CATEGORIES:
            over = slots[c] - len(pools[c])
            if over > 0:
                excess += over
                slots[c] = len(pools[c])
        while excess > 0:
            open_cats = [c for c in CATEGORIES if slots[c] < len(pools[c])]
            if not open_cats:
                raise ExperimentError(
                    f"category exhausted: {strategy.k} slots exceed the catalog"
                )
            slots[open_cats[int(rng.integers(len(open_cats)))]] += 1
            excess -= 1
        chosen = []
        for c in CATEGORIES:
            if slots[c]:
                picks = rng.choice(len(pools[c]), size=slots[c], replace=False)
                chosen.extend(pools[c][i] for i in picks)
        return tuple(sorted(chosen))

    clusters = strategy.clustering.clusters()
    chosen = []
    for cid in sorted(clusters):
        members = clusters[cid]
        chosen.append(members[int(rng.integers(len(members)))])
    return tuple(sorted(chosen))


# ---------------------------------------------------------------------------
# Aggregated rankings
# ---------------------------------------------------------------------------

def aggregate_rank_rows(rank_rows: np.ndarray) -> np.ndarray:
    """Mean the per-metric rank rows, then re-rank fractionally (rank 1 = best)."""
    if rank_rows.size == 0:
        raise ExperimentError("cannot aggregate an empty metric set")
    return fractional_ranks(rank_rows.mean(axis=0))


def normalized_score_rows(tensor: ScoreTensor, dataset_id: str,
                          catalog: list[MetricInstance]) -> np.ndarray:
    """Min-max normalized scores oriented so 1 = best (the alternative aggregator)."""
    rows = []
    for inst in catalog:
        x = tensor.slice(dataset_id, inst.id)
        span = x.max() - x.min()
        if span == 0.0:
            rows.append(np.full_like(x, 0.5))
        elif inst.higher_better:
            rows.append((x - x.min()) / span)
        else:
            rows.append((x.max() - x) / span)
    return np.vstack(rows)


def aggregate_ranking(
    tensor: ScoreTensor,
    dataset_id: str,
    metric_ids,
    catalog: list[MetricInstance],
    aggregation: str = "rank_mean",
) -> np.ndarray:
    """One quality ranking of a dataset's projections from a metric set."""
    metric_ids = list(metric_ids)
    if not metric_ids:
        raise ExperimentError("empty metric set")
    by_id = {m.id: m for m in catalog}
    insts = [by_id[mid] for mid in metric_ids]
    if aggregation == "rank_mean":
        rows = np.vstack([
            quality_ranks(tensor.slice(dataset_id, inst.id), inst.higher_better)
            for inst in insts
        ])
        return aggregate_rank_rows(rows)
    if aggregation == "score_mean":
        rows = normalized_score_rows(tensor, dataset_id, insts)
        return quality_ranks(rows.mean(axis=0), higher_better=True)
    raise ExperimentError(f"unknown aggregation {aggregation!r}")


# ---------------------------------------------------------------------------
# Stability
# ---------------------------------------------------------------------------

def pairwise_spearman_matrix(rankings: np.ndarray) -> np.ndarray:
    """All-pairs Spearman matrix for rows that are already fractional rankings.

    Rows with zero variance (fully tied rankings) correlate as 0 by the
    constant-input convention.
    """
    ranks = np.vstack([fractional_ranks(r) for r in rankings])
    centered = ranks - ranks.mean(axis=1, keepdims=True)
    norms = np.sqrt(np.einsum("ij,ij->i", centered, centered))
    ok = norms > 0.0
    safe = np.where(ok, norms, 1.0)
    unit = centered / safe[:, None]
    mat = unit @ unit.T
    mat[~ok, :] = 0.0
    mat[:, ~ok] = 0.0
    np.clip(mat, -1.0, 1.0, out=mat)
    return mat


def rank_stability(
    rankings, seed: int = 0, exact_limit: int = 200, sample_pairs: int = 5000
) -> float:
    """Mean pairwise Spearman correlation among rankings of one ensemble.

    All pairs when there are at most `exact_limit` rankings; beyond that a
    seeded uniform subsample of `sample_pairs` unordered pairs is used.
    """
    rankings = [np.asarray(r, dtype=float) for r in rankings]
    if len(rankings) < 2:
        raise ExperimentError("need at least 2 rankings")
    r = len(rankings)
    if r <= exact_limit:
        pairs = [(i, j) for i in range(r) for j in range(i + 1, r)]
    else:
        total = r * (r - 1) // 2
        rng = np.random.default_rng(seed)
        flat = rng.choice(total, size=min(sample_pairs, total), replace=False)
        pairs = [_pair_from_flat(int(f), r) for f in flat]
    vals = [spearman_rho(rankings[i], rankings[j]) for i, j in pairs]
    return float(np.mean(vals))


def _pair_from_flat(flat: int, n: int) -> tuple[int, int]:
    # decode a flat upper-triangle index into (i, j), i < j
    i = 0
    row_len = n - 1
    while flat >= row_len:
        flat -= row_len
        i += 1
        row_len -= 1
    return i, i + 1 + flat


@dataclass(frozen=True)
class StabilityReport:
    strategy: str
    k: int
    per_dataset: dict
    stability: float
    repeats: int
    ci_low: float
    ci_high: float
    seed: int
    bootstrap_samples: np.ndarray = field(repr=False, default=None)


def _cell_seed(master: int, *key: int) -> int:
    ss = np.random.SeedSequence([int(master)] + [int(x) for x in key])
    return int(ss.generate_state(1, np.uint64)[0])


def stability_sweep(
    tensor: ScoreTensor,
    catalog: list[MetricInstance],
    clusterings: dict[int, MetricClustering],
    k_range: tuple[int, int] = (4, 10),
    repeats: int = 50,
    seed: int = 0,
    strategies: tuple[str, ...] = STRATEGY_KINDS,
    aggregation: str = "rank_mean",
    bootstrap: int = 1000,
) -> list[StabilityReport]:
    """Stability of each strategy at each k, with a bootstrap 95% interval.

    Per (strategy, k): draw `repeats` metric sets from per-cell sub-seeds,
    aggregate each set into one ranking per dataset, take the mean pairwise
    Spearman correlation per dataset, and average across datasets.  The
    interval resamples the drawn sets with replacement.
    """
    if repeats < 2:
        raise ExperimentError("repeats must be >= 2")
    k_min, k_max = int(k_range[0]), int(k_range[1])
    by_id = {m.id: m for m in catalog}

    if aggregation == "rank_mean":
        base_rows = metric_rank_table(tensor, catalog)
    elif aggregation == "score_mean":
        base_rows = {
            ds: normalized_score_rows(tensor, ds, catalog) for ds in tensor.datasets
        }
    else:
        raise ExperimentError(f"unknown aggregation {aggregation!r}")
    row_of = {m.id: i for i, m in enumerate(catalog)}

    reports = []
    iu_cache: dict[int, tuple] = {}
    for s_idx, kind in enumerate(strategies):
        for k in range(k_min, k_max + 1):
            try:
                sets = []
                for rep in range(repeats):
                    strategy = SelectionStrategy(
                        kind=kind,
                        k=k,
                        seed=_cell_seed(seed, 0, s_idx, k, rep),
                        clustering=clusterings.get(k) if kind == "cluster_based" else None,
                    )
                    sets.append(draw_metric_set(strategy, catalog))
            except ExperimentError as exc:
                raise ExperimentError(f"strategy {kind!r} at k={k}: {exc}") from exc

            per_dataset = {}
            mean_pairs = np.zeros((repeats, repeats), dtype=float)
            for ds in tensor.datasets:
                rankings = np.vstack([
                    _aggregate_from_rows(base_rows[ds], [row_of[mid] for mid in s],
                                         aggregation)
                    for s in sets
                ])
                pair_mat = pairwise_spearman_matrix(rankings)
                iu = iu_cache.setdefault(repeats, np.triu_indices(repeats, k=1))
                per_dataset[ds] = float(pair_mat[iu].mean())
                mean_pairs += pair_mat
            mean_pairs /= len(tensor.datasets)
            iu = iu_cache[repeats]
            overall = float(mean_pairs[iu].mean())

            boot_rng = np.random.default_rng(_cell_seed(seed, 1, s_idx, k))
            samples = np.empty(bootstrap, dtype=float)
            for b in range(bootstrap):
                idx = boot_rng.integers(0, repeats, size=repeats)
                sub = mean_pairs[np.ix_(idx, idx)]
                samples[b] = sub[iu].mean()
            ci_low, ci_high = np.percentile(samples, [2.5, 97.5])

            reports.append(
                StabilityReport(
                    strategy=kind,
                    k=k,
                    per_dataset=per_dataset,
                    stability=overall,
                    repeats=repeats,
                    ci_low=float(ci_low),
                    ci_high=float(ci_high),
                    seed=seed,
                    bootstrap_samples=samples,
                )
            )
    return reports


def _aggregate_from_rows(rows: np.ndarray, indices: list[int], aggregation: str) -> np.ndarray:
    picked = rows[indices]
    if aggregation == "rank_mean":
        return aggregate_rank_rows(picked)
    return quality_ranks(picked.mean(axis=0), higher_better=True)


def bootstrap_difference_interval(
    a: StabilityReport, b: StabilityReport, alpha: float = 0.05
) -> tuple[float, float]:
    """Percentile interval for stability(a) - stability(b) from their bootstrap draws."""
    if a.bootstrap_samples is None or b.bootstrap_samples is None:
        raise ExperimentError("reports lack bootstrap samples")
    diff = a.bootstrap_samples - b.bootstrap_samples
    lo, hi = np.percentile(diff, [100 * alpha / 2, 100 * (1 - alpha / 2)])
    return float(lo), float(hi)
