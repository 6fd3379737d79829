"""Core domain types and file ingestion.

A dataset is a labeled high-dimensional point set; a projection is one 2-D
embedding of it.  Scores for (dataset, projection, metric) triples live in a
dense ScoreTensor, and per-metric quality rankings of an ensemble are
fractional ranks where rank 1 means best quality.

File conventions
----------------
Dataset: CSV, UTF-8, header row, one column named ``label`` (non-negative
integer class ids), every other column a numeric feature.
Projection set: a directory of ``proj_<index>.csv`` files (two numeric
columns) plus ``manifest.json`` with per-index provenance
``{index, generator, hyperparameters, seed}``.
"""
from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fileio import atomic_write_json, atomic_write_text, fmt_float

_PROJ_FILE_RE = re.compile(r"proj_(\d+)\.csv$")


class IngestError(ValueError):
    """A dataset or projection file violates the expected format."""


@dataclass(frozen=True)
class DatasetTable:
    """A labeled point set: `points` is n x d, `labels` has one class id per row."""

    id: str
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        labs = np.asarray(self.labels, dtype=int)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", labs)
        if pts.ndim != 2:
            raise IngestError(f"dataset {self.id!r}: points must be 2-D, got shape {pts.shape}")
        n, d = pts.shape
        if n < 4:
            raise IngestError(f"dataset {self.id!r}: needs at least 4 rows, got {n}")
        if d < 2:
            raise IngestError(f"dataset {self.id!r}: needs at least 2 features, got {d}")
        if labs.shape != (n,):
            raise IngestError(
                f"dataset {self.id!r}: expected {n} labels, got {labs.shape}"
            )
        if np.any(labs < 0):
            raise IngestError(f"dataset {self.id!r}: labels must be non-negative integers")
        if not np.all(np.isfinite(pts)):
            i, j = np.argwhere(~np.isfinite(pts))[0]
            raise IngestError(
                f"dataset {self.id!r}: non-finite feature at row {i}, column {j}"
            )

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def n_classes(self) -> int:
        return int(np.unique(self.labels).size)


@dataclass(frozen=True)
class Projection:
    """One 2-D embedding of a dataset, with generation provenance."""

    dataset_id: str
    index: int
    coords: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        object.__setattr__(self, "coords", coords)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise IngestError(
                f"projection {self.index} of {self.dataset_id!r}: coords must be n x 2, "
                f"got shape {coords.shape}"
            )
        if not np.all(np.isfinite(coords)):
            raise IngestError(
                f"projection {self.index} of {self.dataset_id!r}: non-finite coordinate"
            )

    @property
    def n(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class ProjectionSet:
    """An ordered ensemble of projections of one dataset."""

    dataset_id: str
    projections: tuple

    def __post_init__(self):
        object.__setattr__(self, "projections", tuple(self.projections))
        for slot, proj in enumerate(self.projections):
            if proj.index != slot:
                raise IngestError(
                    f"projection set {self.dataset_id!r}: non-contiguous indices "
                    f"(slot {slot} holds index {proj.index})"
                )

    def __len__(self) -> int:
        return len(self.projections)

    def __iter__(self):
        return iter(self.projections)

    def __getitem__(self, i: int) -> Projection:
        return self.projections[i]


# ---------------------------------------------------------------------------
# Ingestion
# ---------------------------------------------------------------------------

def load_dataset(path: str | Path, dataset_id: str | None = None) -> DatasetTable:
    """Load a dataset CSV (header row, `label` column, numeric features).

    Row order is preserved.  Errors name the offending row/column.
    """
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        if "label" not in header:
            raise IngestError(f"{path}: missing required 'label' column")
        label_col = header.index("label")
        feature_cols = [i for i in range(len(header)) if i != label_col]
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise IngestError(
                    f"{path}: row {lineno} has {len(row)} cells, expected {len(header)}"
                )
            feats = []
            for i in feature_cols:
                try:
                    v = float(row[i])
                except ValueError:
                    raise IngestError(
                        f"{path}: non-numeric feature at row {lineno}, "
                        f"column {header[i]!r}"
                    ) from None
                if not math.isfinite(v):
                    raise IngestError(
                        f"{path}: non-finite feature at row {lineno}, column {header[i]!r}"
                    )
                feats.append(v)
            try:
                lab = int(row[label_col])
            except ValueError:
                raise IngestError(
                    f"{path}: non-integer label at row {lineno}"
                ) from None
            rows.append(feats)
            labels.append(lab)
    if len(rows) < 4:
        raise IngestError(f"{path}: needs at least 4 data rows, got {len(rows)}")
    return DatasetTable(
        id=dataset_id if dataset_id is not None else path.stem,
        points=np.array(rows, dtype=float),
        labels=np.array(labels, dtype=int),
    )


def save_dataset(data: DatasetTable, path: str | Path) -> None:
    """Write a DatasetTable in the load_dataset CSV format (deterministic bytes)."""
    lines = [",".join([f"f{j}" for j in range(data.d)] + ["label"])]
    for row, lab in zip(data.points, data.labels):
        lines.append(",".join(fmt_float(v) for v in row) + f",{int(lab)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_projection_set(
    path: str | Path, expected_n: int | None = None, dataset_id: str | None = None
) -> ProjectionSet:
    """Load ``proj_<index>.csv`` files plus ``manifest.json`` from a directory."""
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise IngestError(f"{path}: missing manifest.json")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    ds_id = dataset_id if dataset_id is not None else manifest.get("dataset_id", path.name)
    entries = {int(e["index"]): e for e in manifest.get("projections", [])}

    found = {}
    for f in path.iterdir():
        m = _PROJ_FILE_RE.match(f.name)
        if m:
            found[int(m.group(1))] = f
    if not found:
        raise IngestError(f"{path}: no proj_<index>.csv files")
    indices = sorted(found)
    if indices != list(range(len(indices))):
        raise IngestError(f"{path}: non-contiguous projection indices {indices}")

    projections = []
    for idx in indices:
        if idx not in entries:
            raise IngestError(f"{path}: manifest has no entry for index {idx}")
        coords = _read_two_column_csv(found[idx])
        if expected_n is not None and coords.shape[0] != expected_n:
            raise IngestError(
                f"{path}: projection {idx} has {coords.shape[0]} rows, "
                f"expected {expected_n}"
            )
        e = entries[idx]
        projections.append(
            Projection(
                dataset_id=ds_id,
                index=idx,
                coords=coords,
                provenance={
                    "generator": e.get("generator", "unknown"),
                    "hyperparameters": e.get("hyperparameters", {}),
                    "seed": e.get("seed", 0),
                },
            )
        )
    ns = {p.n for p in projections}
    if len(ns) > 1:
        raise IngestError(f"{path}: projections disagree on row count: {sorted(ns)}")
    return ProjectionSet(dataset_id=ds_id, projections=tuple(projections))


def _read_two_column_csv(path: Path) -> np.ndarray:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != 2:
                raise IngestError(f"{path}: row {lineno} has {len(row)} columns, expected 2")
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                if lineno == 1:
                    continue  # tolerate a header line
                raise IngestError(f"{path}: non-numeric value at row {lineno}") from None
    if not rows:
        raise IngestError(f"{path}: no coordinate rows")
    return np.array(rows, dtype=float)


def save_projection_set(pset: ProjectionSet, path: str | Path) -> None:
    """Write an ensemble as proj_<index>.csv files plus manifest.json."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    manifest = {"dataset_id": pset.dataset_id, "projections": []}
    for proj in pset:
        lines = [f"{fmt_float(x)},{fmt_float(y)}" for x, y in proj.coords]
        atomic_write_text(path / f"proj_{proj.index}.csv", "\n".join(lines) + "\n")
        manifest["projections"].append(
            {
                "index": proj.index,
                "generator": proj.provenance.get("generator", "unknown"),
                "hyperparameters": proj.provenance.get("hyperparameters", {}),
                "seed": proj.provenance.get("seed", 0),
            }
        )
    atomic_write_json(path / "manifest.json", manifest)


# ---------------------------------------------------------------------------
# Rankings and the score tensor
# ---------------------------------------------------------------------------

def fractional_ranks(values) -> np.ndarray:
    """Fractional (average) ranks, 1-based; ties share the mean of their positions."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise ValueError("fractional_ranks expects a 1-D sequence")
    n = values.size
    order = np.argsort(values, kind="stable")
    ranks = np.empty(n, dtype=float)
    i = 0
    while i < n:
        j = i
        while j + 1 < n and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def quality_ranks(scores, higher_better: bool) -> np.ndarray:
    """Orientation-normalized fractional ranking of projection scores (rank 1 = best)."""
    scores = np.asarray(scores, dtype=float)
    return fractional_ranks(-scores if higher_better else scores)


@dataclass(frozen=True)
class QualityRanking:
    """Fractional quality ranks of one ensemble under one metric (or metric set)."""

    dataset_id: str
    metric_id: str
    ranks: np.ndarray

    def __post_init__(self):
        ranks = np.asarray(self.ranks, dtype=float)
        object.__setattr__(self, "ranks", ranks)
        m = ranks.size
        if not math.isclose(float(ranks.sum()), m * (m + 1) / 2, rel_tol=1e-12):
            raise ValueError(
                f"ranks do not form a fractional ranking of 1..{m} "
                f"(sum {ranks.sum()}, expected {m * (m + 1) / 2})"
            )


class ScoreTensor:
    """Dense scores indexed by (dataset id, projection index, metric id)."""

    def __init__(
        self,
        datasets: list[str],
        projections_per_dataset: dict[str, int],
        metrics: list[str],
        scores: dict[tuple[str, int, str], float],
    ):
        self.datasets = list(datasets)
        self.projections_per_dataset = dict(projections_per_dataset)
        self.metrics = list(metrics)
        self.scores = dict(scores)
        self.validate()

    def validate(self) -> None:
        for ds in self.datasets:
            m = self.projections_per_dataset[ds]
            for p in range(m):
                for metric in self.metrics:
                    key = (ds, p, metric)
                    if key not in self.scores:
                        raise ValueError(f"score tensor is not dense: missing {key}")
                    if not math.isfinite(self.scores[key]):
                        raise ValueError(f"non-finite score at {key}")

    def slice(self, dataset_id: str, metric_id: str) -> np.ndarray:
        """Scores of every projection of one dataset under one metric, by index."""
        m = self.projections_per_dataset[dataset_id]
        return np.array(
            [self.scores[(dataset_id, p, metric_id)] for p in range(m)], dtype=float
        )

    def ranking(self, dataset_id: str, metric_id: str, higher_better: bool) -> QualityRanking:
        return QualityRanking(
            dataset_id=dataset_id,
            metric_id=metric_id,
            ranks=quality_ranks(self.slice(dataset_id, metric_id), higher_better),
        )

    def to_csv(self, path: str | Path) -> None:
        """Long-format CSV: dataset, projection, metric, value."""
        lines = ["dataset,projection,metric,value"]
        for ds in self.datasets:
            for p in range(self.projections_per_dataset[ds]):
                for metric in self.metrics:
                    lines.append(f"{ds},{p},{metric},{fmt_float(self.scores[(ds, p, metric)])}")
        atomic_write_text(path, "\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "ScoreTensor":
        datasets: list[str] = []
        metrics: list[str] = []
        counts: dict[str, int] = {}
        scores: dict[tuple[str, int, str], float] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["dataset", "projection", "metric", "value"]:
                raise IngestError(f"{path}: unexpected scores header {header}")
            for row in reader:
                ds, p, metric, value = row[0], int(row[1]), row[2], float(row[3])
                if ds not in counts:
                    datasets.append(ds)
                    counts[ds] = 0
                counts[ds] = max(counts[ds], p + 1)
                if metric not in metrics:
                    metrics.append(metric)
                scores[(ds, p, metric)] = value
        return cls(datasets, counts, metrics, scores)
