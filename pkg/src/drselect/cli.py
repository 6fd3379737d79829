"""Pipeline commands: score, analyze, stability, recommend.

Each command is a pure function of (config, input files): rerunning with the
same config and seed produces byte-identical outputs.  `recommend` composes
the other stages end to end, writing the same intermediate files plus the
final recommendation.

Exit codes: 0 success, 2 configuration error, 1 data or computation error.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (choose_optimal_k, cut_to_k, drop_singletons, hier_cluster,
                       metric_similarity_matrix, select_representatives)
from .cache import ScoreCache
from .config import ConfigError, RunConfig, load_config
from .data import ScoreTensor, load_projection_set, save_dataset, save_projection_set
from .ensemble import generate_projections
from .experiments import stability_sweep
from .figures import STRATEGY_COLORS, heatmap_svg, line_chart_svg
from .fileio import atomic_write_json, atomic_write_text, fmt_float
from .metrics import catalog_to_json, evaluate_all


def _write_manifest(cfg: RunConfig, out: Path, command: str, seed_override: int | None):
    atomic_write_json(
        out / "manifest.json",
        {
            "command": command,
            "config": cfg.raw,
            "seed_override": seed_override,
            "version": __version__,
        },
    )


def _derive_seed(master: int, *parts: int) -> int:
    ss = np.random.SeedSequence([int(master)] + [int(p) for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])


def cmd_score(cfg: RunConfig, out: Path, threads: int = 1) -> ScoreTensor:
    """Build/load datasets and ensembles, score everything, write scores.csv."""
    t0 = time.perf_counter()
    catalog = cfg.catalog()
    specs = cfg.generator_specs()
    cache = ScoreCache(cfg.cache_dir)

    datasets, psets = [], {}
    for i, entry in enumerate(cfg.dataset_entries()):
        data = cfg.build_dataset(entry)
        datasets.append(data)
        save_dataset(data, out / "datasets" / f"{data.id}.csv")
        if entry.get("projections"):
            pset = load_projection_set(
                cfg._resolve(entry["projections"]), expected_n=data.n, dataset_id=data.id
            )
        else:
            pset = generate_projections(
                data,
                count=cfg.ensemble["count"],
                specs=specs,
                seed=_derive_seed(cfg.ensemble["seed"], i),
            )
        psets[data.id] = pset
        save_projection_set(pset, out / "projections" / data.id)

    stats: dict = {}
    tensor = evaluate_all(datasets, psets, catalog, cache=cache, threads=threads,
                          stats=stats)
    tensor.to_csv(out / "scores.csv")
    atomic_write_json(out / "metric_catalog.json", catalog_to_json(catalog))
    n_scores = sum(tensor.projections_per_dataset.values()) * len(catalog)
    print(
        f"scored {len(datasets)} datasets x {cfg.ensemble['count']} projections x "
        f"{len(catalog)} metrics = {n_scores} scores "
        f"({stats['computed']} computed, {stats['cache_hits']} cached) "
        f"in {time.perf_counter() - t0:.1f}s"
    )
    return tensor


def _load_tensor(out: Path) -> ScoreTensor:
    scores_path = out / "scores.csv"
    if not scores_path.exists():
        raise FileNotFoundError(f"{scores_path} not found; run the score command first")
    return ScoreTensor.from_csv(scores_path)


def cmd_analyze(cfg: RunConfig, out: Path, tensor: ScoreTensor | None = None):
    """Correlate, cluster, pick representatives, and run the elbow analysis."""
    catalog = cfg.catalog()
    if tensor is None:
        tensor = _load_tensor(out)
    missing = [m.id for m in catalog if m.id not in tensor.metrics]
    if missing:
        raise ValueError(f"scores.csv lacks metrics {missing}; re-run score")

    sim = metric_similarity_matrix(tensor, catalog)
    sim.to_csv(out / "similarity.csv")
    atomic_write_json(out / "similarity.json", sim.to_json_obj())

    dend = hier_cluster(sim)
    atomic_write_json(out / "dendrogram.json", dend.to_json_obj())
    leaf_order = dend.leaf_order()
    atomic_write_json(out / "heatmap_order.json", leaf_order)

    an = cfg.analysis
    k_lo, k_hi = an["k_range"]
    k_hi = min(k_hi, len(catalog))
    policy = an["singleton_policy"]
    per_k = {}
    for k in range(k_lo, k_hi + 1):
        clustering = cut_to_k(dend, k)
        if policy == "drop" and any(
            len(ms) > 1 for ms in clustering.clusters().values()
        ):
            clustering = drop_singletons(clustering)
        clustering = select_representatives(clustering, sim)
        per_k[k] = clustering
        atomic_write_json(out / f"clusters_k{k}.json", clustering.to_json_obj())

    optimal = choose_optimal_k(
        sim, (k_lo, k_hi), singleton_policy=policy,
        sensitivity=an["kneedle_sensitivity"],
    )
    lines = ["k,D,D_norm"]
    for p in optimal.curve:
        lines.append(f"{p.k},{fmt_float(p.d_total)},{fmt_float(p.d_norm)}")
    atomic_write_text(out / "diversity.csv", "\n".join(lines) + "\n")

    chosen = per_k[optimal.k]
    by_id = {m.id: m for m in catalog}
    reps = sorted(chosen.representatives.values())
    categories = sorted({by_id[r].category for r in reps})
    atomic_write_json(
        out / "optimal_k.json",
        {
            "optimal_k": optimal.k,
            "knee": optimal.knee,
            "no_knee": optimal.no_knee,
            "skipped": [{"k": k, "reason": reason} for k, reason in optimal.skipped],
            "curve": [
                {"k": p.k, "n_representatives": p.n_representatives,
                 "D": p.d_total, "D_norm": p.d_norm,
                 "representatives": list(p.representatives)}
                for p in optimal.curve
            ],
            "representatives": reps,
            "categories_covered": categories,
            "covers_all_categories": categories == ["cluster_level", "global", "local"],
        },
    )

    order_idx = [sim.index(mid) for mid in leaf_order]
    values_ordered = sim.values[np.ix_(order_idx, order_idx)]
    cluster_of = {mid: cid for mid, cid in chosen.assignments.items()}
    atomic_write_text(
        out / "fig_heatmap.svg",
        heatmap_svg(
            "Metric similarity (avg Spearman), dendrogram order",
            leaf_order, values_ordered,
            categories={m.id: m.category for m in catalog},
            cluster_of=cluster_of,
        ),
    )
    elbow_series = [
        {"label": "D (total diversity)", "color": "#4477aa",
         "points": [(p.k, p.d_total) for p in optimal.curve]},
        {"label": "D_norm", "color": "#228833",
         "points": [(p.k, p.d_norm) for p in optimal.curve]},
    ]
    atomic_write_text(
        out / "fig_elbow.svg",
        line_chart_svg(
            "Diversity of representative metrics vs cluster count",
            "number of clusters k", "diversity",
            elbow_series, vline=float(optimal.k), vline_label=f"k={optimal.k}",
        ),
    )
    flag = " (no knee; argmax D_norm)" if optimal.no_knee else ""
    print(f"optimal k = {optimal.k}{flag}; representatives: {', '.join(reps)}")
    return sim, dend, per_k, optimal


def cmd_stability(cfg: RunConfig, out: Path, tensor: ScoreTensor | None = None):
    """Run the strategy-vs-k rank-stability sweep and write stability.csv."""
    catalog = cfg.catalog()
    if tensor is None:
        tensor = _load_tensor(out)
    sim = metric_similarity_matrix(tensor, catalog)
    dend = hier_cluster(sim)
    ex = cfg.experiments
    k_lo, k_hi = ex["k_range"]
    k_hi = min(k_hi, len(catalog))
    # singletons stay in for the sweep: every strategy then draws exactly k
    # metrics, keeping set sizes comparable across strategies
    clusterings = {k: cut_to_k(dend, k) for k in range(k_lo, k_hi + 1)}
    reports = stability_sweep(
        tensor, catalog, clusterings,
        k_range=(k_lo, k_hi),
        repeats=ex["repeats"],
        seed=ex["seed"],
        strategies=tuple(ex["strategies"]),
        aggregation=ex["aggregation"],
        bootstrap=ex["bootstrap_samples"],
    )
    lines = ["strategy,k,stability,ci_low,ci_high,repeats,seed"]
    for r in reports:
        lines.append(
            f"{r.strategy},{r.k},{fmt_float(r.stability)},{fmt_float(r.ci_low)},"
            f"{fmt_float(r.ci_high)},{r.repeats},{r.seed}"
        )
    atomic_write_text(out / "stability.csv", "\n".join(lines) + "\n")

    series = []
    for kind in ex["strategies"]:
        rows = [r for r in reports if r.strategy == kind]
        series.append(
            {
                "label": kind,
                "color": STRATEGY_COLORS.get(kind, "#000000"),
                "points": [(r.k, r.stability) for r in rows],
                "bands": [(r.k, r.ci_low, r.ci_high) for r in rows],
            }
        )
    atomic_write_text(
        out / "fig_rank.svg",
        line_chart_svg(
            "Rank stability by metric selection strategy",
            "number of clusters k", "rank stability (mean pairwise Spearman)",
            series,
        ),
    )
    print(f"stability sweep: {len(reports)} (strategy, k) cells -> stability.csv")
    return reports


def cmd_recommend(cfg: RunConfig, out: Path, threads: int = 1):
    """End-to-end: score -> analyze -> representatives at the optimal k."""
    tensor = cmd_score(cfg, out, threads=threads)
    sim, _dend, per_k, optimal = cmd_analyze(cfg, out, tensor=tensor)
    catalog = {m.id: m for m in cfg.catalog()}
    chosen = per_k[optimal.k]
    reps = sorted(chosen.representatives.values())
    from .analysis import diversity

    report = diversity(reps, sim) if len(reps) >= 2 else None
    atomic_write_json(
        out / "recommendation.json",
        {
            "optimal_k": optimal.k,
            "knee": optimal.knee,
            "no_knee": optimal.no_knee,
            "metrics": [
                {
                    "id": mid,
                    "family": catalog[mid].family,
                    "params": catalog[mid].params,
                    "category": catalog[mid].category,
                    "orientation": catalog[mid].orientation,
                }
                for mid in reps
            ],
            "diversity": None if report is None else {
                "ind": report.ind, "D": report.d_total, "D_norm": report.d_norm,
            },
            "singletons_removed": sorted(chosen.singletons_removed),
        },
    )
    print(f"recommended {len(reps)} metrics -> recommendation.json")
    return reps


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="drselect",
        description="Select dimensionality-reduction evaluation metrics by "
                    "empirical behavior.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("score", "score every (dataset, projection, metric) triple"),
        ("analyze", "similarity matrix, clustering, representatives, elbow"),
        ("stability", "rank-stability sweep across selection strategies"),
        ("recommend", "end-to-end run producing recommendation.json"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the run config JSON")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None,
                       help="override every config seed from this master seed")
        p.add_argument("--threads", type=int, default=1, help="worker processes for scoring")

    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed_override(args.seed)
        out = Path(args.out) if args.out else cfg.output_dir
        out.mkdir(parents=True, exist_ok=True)
        _write_manifest(cfg, out, args.command, args.seed)
        if args.command == "score":
            cmd_score(cfg, out, threads=args.threads)
        elif args.command == "analyze":
            cmd_analyze(cfg, out)
        elif args.command == "stability":
            cmd_stability(cfg, out)
        else:
            cmd_recommend(cfg, out, threads=args.threads)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # data / computation errors
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
