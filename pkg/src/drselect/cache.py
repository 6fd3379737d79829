"""On-disk score cache, content-addressed by dataset and projection bytes.

One JSON file per (dataset id, metric id) pair holds every projection score,
keyed by a fingerprint of the projection's coordinates, so regenerating an
identical ensemble reuses scores while any change to coordinates misses.
Corrupt cache files are treated as misses with a warning, never a crash.
Writes are atomic (last writer wins); values for a key are deterministic so
that is safe.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path

from .fileio import array_fingerprint, atomic_write_json

log = logging.getLogger(__name__)


class ScoreCache:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0
        self._loaded: dict[tuple[str, str], dict] = {}

    def _path(self, dataset_id: str, metric_id: str) -> Path:
        return self.root / dataset_id / f"{metric_id}.json"

    def _load(self, dataset_id: str, metric_id: str) -> dict:
        key = (dataset_id, metric_id)
        if key in self._loaded:
            return self._loaded[key]
        path = self._path(dataset_id, metric_id)
        record: dict = {"entries": {}}
        if path.exists():
            try:
                with open(path, encoding="utf-8") as fh:
                    raw = json.load(fh)
                if isinstance(raw, dict) and isinstance(raw.get("entries"), dict):
                    record = {"entries": {str(k): float(v) for k, v in raw["entries"].items()}}
                else:
                    log.warning("cache file %s has unexpected shape; ignoring", path)
            except (json.JSONDecodeError, OSError, TypeError, ValueError) as exc:
                log.warning("corrupt cache file %s (%s); treating as miss", path, exc)
        self._loaded[key] = record
        return record

    def get(self, dataset_id: str, metric_id: str, fingerprint: str) -> float | None:
        record = self._load(dataset_id, metric_id)
        value = record["entries"].get(fingerprint)
        if value is None:
            self.misses += 1
            return None
        self.hits += 1
        return value

    def put(self, dataset_id: str, metric_id: str, fingerprint: str, value: float) -> None:
        record = self._load(dataset_id, metric_id)
        record["entries"][fingerprint] = float(value)
        atomic_write_json(self._path(dataset_id, metric_id), record)

    def put_many(
        self, dataset_id: str, metric_id: str, items: dict[str, float]
    ) -> None:
        """Store several fingerprint->value entries with one file write."""
        record = self._load(dataset_id, metric_id)
        for fp, value in items.items():
            record["entries"][fp] = float(value)
        atomic_write_json(self._path(dataset_id, metric_id), record)


def projection_fingerprint(coords, dataset_points, dataset_labels) -> str:
    """Cache key: hash of the projection coordinates and the dataset content."""
    return array_fingerprint(coords, dataset_points, dataset_labels)
