"""Run configuration: a single JSON file drives every command.

Unknown keys are rejected, every option has an explicit value after
defaulting, and all seeds are fixed integers (never wall clock), so a config +
seed pair fully determines every output byte.
"""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

from .data import DatasetTable, load_dataset
from .ensemble import DEFAULT_GENERATORS, GeneratorSpec, synth_dataset
from .metrics import FAMILIES, MetricInstance, default_catalog


class ConfigError(ValueError):
    pass


DEFAULT_DATASETS = [
    {"kind": "synthetic", "id": "synth_00", "n": 300, "d": 10, "n_clusters": 3,
     "spread": 0.05, "seed": 101},
    {"kind": "synthetic", "id": "synth_01", "n": 300, "d": 20, "n_clusters": 4,
     "spread": 0.10, "seed": 102},
    {"kind": "synthetic", "id": "synth_02", "n": 300, "d": 50, "n_clusters": 5,
     "spread": 0.15, "seed": 103},
    {"kind": "synthetic", "id": "synth_03", "n": 300, "d": 10, "n_clusters": 6,
     "spread": 0.08, "seed": 104},
    {"kind": "synthetic", "id": "synth_04", "n": 300, "d": 20, "n_clusters": 3,
     "spread": 0.12, "seed": 105},
    {"kind": "synthetic", "id": "synth_05", "n": 300, "d": 50, "n_clusters": 4,
     "spread": 0.06, "seed": 106},
]

DEFAULTS = {
    "output_dir": "out",
    "cache_dir": "cache",
    "datasets": DEFAULT_DATASETS,
    "ensemble": {
        "count": 50,
        "seed": 424242,
        "generators": [spec.name for spec in DEFAULT_GENERATORS],
    },
    "metrics": {
        "families": ["trustworthiness_continuity", "mrre", "neighbor_dissimilarity",
                     "distance_consistency", "silhouette", "stress", "kl_divergence"],
        "knn_sizes": [5, 10, 25],
        "kl_sigmas": [0.1, 1.0],
    },
    "analysis": {
        "k_range": [2, 10],
        "kneedle_sensitivity": 1.0,
        "singleton_policy": "drop",
    },
    "experiments": {
        "strategies": ["random", "class_based", "cluster_based"],
        "k_range": [4, 10],
        "repeats": 50,
        "seed": 7,
        "aggregation": "rank_mean",
        "bootstrap_samples": 1000,
    },
}

_DEFAULT_RANGES = {spec.name: dict(spec.ranges) for spec in DEFAULT_GENERATORS}


def _merge_section(defaults: dict, user: dict, path: str) -> dict:
    out = copy.deepcopy(defaults)
    for key, value in user.items():
        if key not in defaults:
            raise ConfigError(f"unknown config key {path}{key!r}")
        if isinstance(defaults[key], dict) and not isinstance(value, dict):
            raise ConfigError(f"config key {path}{key!r} must be an object")
        if isinstance(defaults[key], dict):
            out[key] = _merge_section(defaults[key], value, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    base_dir: Path

    @property
    def output_dir(self) -> Path:
        return self._resolve(self.raw["output_dir"])

    @property
    def cache_dir(self) -> Path:
        cache = Path(self.raw["cache_dir"])
        return cache if cache.is_absolute() else self.output_dir / cache

    def _resolve(self, p: str) -> Path:
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def ensemble(self) -> dict:
        return self.raw["ensemble"]

    @property
    def analysis(self) -> dict:
        return self.raw["analysis"]

    @property
    def experiments(self) -> dict:
        return self.raw["experiments"]

    def dataset_entries(self) -> list[dict]:
        return self.raw["datasets"]

    def build_dataset(self, entry: dict) -> DatasetTable:
        if entry["kind"] == "synthetic":
            return synth_dataset(
                n=entry["n"], d=entry["d"], n_clusters=entry["n_clusters"],
                spread=entry["spread"], seed=entry["seed"], dataset_id=entry["id"],
            )
        return load_dataset(self._resolve(entry["path"]), dataset_id=entry["id"])

    def generator_specs(self) -> tuple[GeneratorSpec, ...]:
        specs = []
        for g in self.ensemble["generators"]:
            if isinstance(g, str):
                specs.append(GeneratorSpec(g, _DEFAULT_RANGES.get(g, {})))
            else:
                ranges = {k: (float(v[0]), float(v[1])) for k, v in g.get("ranges", {}).items()}
                specs.append(GeneratorSpec(g["name"], ranges))
        return tuple(specs)

    def catalog(self) -> list[MetricInstance]:
        mc = self.raw["metrics"]
        return default_catalog(
            knn_sizes=tuple(mc["knn_sizes"]),
            kl_sigmas=tuple(mc["kl_sigmas"]),
            families=tuple(mc["families"]),
        )

    def with_seed_override(self, seed: int) -> "RunConfig":
        """Replace every seed deterministically from one master seed."""
        raw = copy.deepcopy(self.raw)
        for i, entry in enumerate(raw["datasets"]):
            if entry["kind"] == "synthetic":
                entry["seed"] = seed + i
        raw["ensemble"]["seed"] = seed + 100
        raw["experiments"]["seed"] = seed + 200
        return RunConfig(raw=raw, base_dir=self.base_dir)


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def _validate(raw: dict) -> None:
    _require(isinstance(raw["output_dir"], str), "output_dir must be a string")
    _require(isinstance(raw["cache_dir"], str), "cache_dir must be a string")

    _require(isinstance(raw["datasets"], list) and raw["datasets"],
             "datasets must be a non-empty list")
    ids = set()
    for entry in raw["datasets"]:
        _require(isinstance(entry, dict), "each dataset entry must be an object")
        kind = entry.get("kind")
        if kind == "synthetic":
            allowed = {"kind", "id", "n", "d", "n_clusters", "spread", "seed"}
            missing = allowed - set(entry)
            _require(not missing, f"synthetic dataset missing keys {sorted(missing)}")
            _require(isinstance(entry["seed"], int), "dataset seed must be an integer")
        elif kind == "csv":
            allowed = {"kind", "id", "path", "projections"}
            _require("id" in entry and "path" in entry,
                     "csv dataset requires 'id' and 'path'")
        else:
            raise ConfigError(f"dataset kind must be 'synthetic' or 'csv', got {kind!r}")
        extra = set(entry) - allowed
        _require(not extra, f"unknown dataset keys {sorted(extra)}")
        _require(entry["id"] not in ids, f"duplicate dataset id {entry['id']!r}")
        ids.add(entry["id"])

    ens = raw["ensemble"]
    _require(isinstance(ens["count"], int) and ens["count"] >= 2,
             "ensemble.count must be an integer >= 2")
    _require(isinstance(ens["seed"], int), "ensemble.seed must be an integer")
    _require(isinstance(ens["generators"], list) and ens["generators"],
             "ensemble.generators must be a non-empty list")

    mc = raw["metrics"]
    for fam in mc["families"]:
        _require(fam in FAMILIES, f"unknown metric family {fam!r}")
    _require(all(isinstance(k, int) and k >= 1 for k in mc["knn_sizes"]),
             "metrics.knn_sizes must be positive integers")
    _require(all(s > 0 for s in mc["kl_sigmas"]),
             "metrics.kl_sigmas must be positive")

    an = raw["analysis"]
    kr = an["k_range"]
    _require(isinstance(kr, list) and len(kr) == 2 and 2 <= kr[0] <= kr[1],
             "analysis.k_range must be [lo, hi] with 2 <= lo <= hi")
    _require(an["singleton_policy"] in ("drop", "keep"),
             "analysis.singleton_policy must be 'drop' or 'keep'")
    _require(an["kneedle_sensitivity"] > 0, "analysis.kneedle_sensitivity must be > 0")

    ex = raw["experiments"]
    for s in ex["strategies"]:
        _require(s in ("random", "class_based", "cluster_based"),
                 f"unknown strategy {s!r}")
    kr = ex["k_range"]
    _require(isinstance(kr, list) and len(kr) == 2 and 2 <= kr[0] <= kr[1],
             "experiments.k_range must be [lo, hi] with 2 <= lo <= hi")
    _require(isinstance(ex["repeats"], int) and ex["repeats"] >= 2,
             "experiments.repeats must be an integer >= 2")
    _require(isinstance(ex["seed"], int), "experiments.seed must be an integer")
    _require(ex["aggregation"] in ("rank_mean", "score_mean"),
             "experiments.aggregation must be 'rank_mean' or 'score_mean'")
    _require(isinstance(ex["bootstrap_samples"], int) and ex["bootstrap_samples"] >= 100,
             "experiments.bootstrap_samples must be an integer >= 100")


def config_from_dict(user: dict, base_dir: str | Path = ".") -> RunConfig:
    if not isinstance(user, dict):
        raise ConfigError("config root must be a JSON object")
    raw = _merge_section(DEFAULTS, user, "")
    _validate(raw)
    return RunConfig(raw=raw, base_dir=Path(base_dir))


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            user = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return config_from_dict(user, base_dir=path.parent)
