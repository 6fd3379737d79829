"""Synthetic datasets and diverse projection ensembles.

The ensemble generator stands in for a zoo of DR techniques: each slot picks
one of seven cheap generator families at random, samples its hyperparameters
from configured ranges, and records full provenance.  The families span
faithful linear projections (pca, classical_mds), random and perturbed maps
(random_linear, pca_jitter, nonlinear_squash), a small force-directed layout
(spring_layout), and deliberate structure destruction (shuffled_pca), so an
ensemble covers both high- and low-quality projections.

Every slot draws from an independent sub-seed derived from the master seed by
a counter scheme, so generation is reproducible regardless of execution order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import DatasetTable, Projection, ProjectionSet
from .neighbors import pairwise_distances

GENERATOR_NAMES = (
    "pca",
    "random_linear",
    "classical_mds",
    "pca_jitter",
    "spring_layout",
    "shuffled_pca",
    "nonlinear_squash",
)


class GeneratorError(RuntimeError):
    """A generator produced a degenerate projection for this input."""


@dataclass(frozen=True)
class GeneratorSpec:
    """One generator family plus uniform sampling ranges for its hyperparameters."""

    name: str
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.name not in GENERATOR_NAMES:
            raise ValueError(f"unknown generator {self.name!r}")
        for param, (lo, hi) in self.ranges.items():
            if not lo <= hi:
                raise ValueError(f"{self.name}.{param}: empty range ({lo}, {hi})")


DEFAULT_GENERATORS = (
    GeneratorSpec("pca"),
    GeneratorSpec("random_linear"),
    GeneratorSpec("classical_mds"),
    GeneratorSpec("pca_jitter", {"noise": (0.01, 1.0)}),
    GeneratorSpec("spring_layout", {"iterations": (10.0, 40.0), "k": (3.0, 10.0)}),
    GeneratorSpec("shuffled_pca", {"fraction": (0.3, 1.0)}),
    GeneratorSpec("nonlinear_squash", {"gain": (0.5, 5.0)}),
)


def synth_dataset(
    n: int, d: int, n_clusters: int, spread: float, seed: int, dataset_id: str | None = None
) -> DatasetTable:
    """Gaussian mixture: uniform centers in [0,1]^d, round-robin assignment,
    isotropic per-cluster noise with standard deviation `spread`."""
    if n_clusters < 1 or n < 4 * n_clusters:
        raise ValueError(f"need n >= 4*n_clusters, got n={n}, n_clusters={n_clusters}")
    if d < 2:
        raise ValueError(f"need d >= 2, got {d}")
    if spread <= 0:
        raise ValueError(f"spread must be positive, got {spread}")
    rng = np.random.default_rng(seed)
    centers = rng.uniform(0.0, 1.0, size=(n_clusters, d))
    labels = np.arange(n) % n_clusters
    points = centers[labels] + rng.normal(0.0, spread, size=(n, d))
    return DatasetTable(
        id=dataset_id if dataset_id is not None else f"synth_n{n}_d{d}_c{n_clusters}_s{seed}",
        points=points,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Generator families
# ---------------------------------------------------------------------------

def _pca_coords(points: np.ndarray) -> np.ndarray:
    centered = points - points.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    if np.count_nonzero(s > 1e-12 * max(s[0], 1.0)) < 2:
        raise GeneratorError("pca: input has rank < 2")
    comps = vt[:2]
    # sign convention: largest-magnitude loading positive
    for r in range(2):
        j = np.argmax(np.abs(comps[r]))
        if comps[r, j] < 0:
            comps[r] = -comps[r]
    return centered @ comps.T


def _run_generator(name: str, points: np.ndarray, params: dict, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    if name == "pca":
        return _pca_coords(points)
    if name == "random_linear":
        m = rng.standard_normal((points.shape[1], 2))
        return (points - points.mean(axis=0)) @ m
    if name == "classical_mds":
        d2 = pairwise_distances(points) ** 2
        j = np.eye(n) - np.full((n, n), 1.0 / n)
        b = -0.5 * j @ d2 @ j
        vals, vecs = np.linalg.eigh(b)
        order = np.argsort(vals)[::-1][:2]
        top = vals[order]
        if np.any(top <= 1e-12 * max(abs(vals).max(), 1.0)):
            raise GeneratorError("classical_mds: fewer than 2 positive eigenvalues")
        coords = vecs[:, order] * np.sqrt(top)
        for r in range(2):
            jmax = np.argmax(np.abs(coords[:, r]))
            if coords[jmax, r] < 0:
                coords[:, r] = -coords[:, r]
        return coords
    if name == "pca_jitter":
        base = _pca_coords(points)
        return base + rng.normal(0.0, params["noise"], size=base.shape)
    if name == "spring_layout":
        iters = max(1, int(round(params["iterations"])))
        k = min(max(1, int(round(params["k"]))), n - 2)
        dist = pairwise_distances(points)
        np.fill_diagonal(dist, np.inf)
        nbrs = np.argsort(dist, axis=1)[:, :k]
        pos = rng.standard_normal((n, 2))
        for _ in range(iters):
            attract = pos[nbrs].mean(axis=1) - pos
            diff = pos[:, None, :] - pos[None, :, :]
            sq = np.einsum("ijk,ijk->ij", diff, diff) + 1e-6
            repulse = (diff / sq[:, :, None]).sum(axis=1) / n
            pos = pos + 0.1 * attract + 0.05 * repulse
        return pos
    if name == "shuffled_pca":
        base = _pca_coords(points)
        count = int(round(params["fraction"] * n))
        if count >= 2:
            chosen = rng.choice(n, size=count, replace=False)
            base = base.copy()
            base[chosen] = base[chosen][rng.permutation(count)]
        return base
    if name == "nonlinear_squash":
        return np.tanh(params["gain"] * _pca_coords(points))
    raise ValueError(f"unknown generator {name!r}")  # pragma: no cover


def _slot_seed(master_seed: int, slot: int, attempt: int) -> int:
    ss = np.random.SeedSequence([int(master_seed), int(slot), int(attempt)])
    return int(ss.generate_state(1, np.uint64)[0])


def generate_projections(
    data: DatasetTable,
    count: int,
    specs: tuple[GeneratorSpec, ...] = DEFAULT_GENERATORS,
    seed: int = 0,
    max_retries: int = 10,
) -> ProjectionSet:
    """Generate `count` projections, each from a randomly chosen generator.

    Degenerate outputs (all-coincident points, rank-deficient inputs) are
    resampled with a fresh generator/hyperparameter draw, up to `max_retries`
    per slot.
    """
    if count < 2:
        raise ValueError(f"count must be >= 2, got {count}")
    if not specs:
        raise ValueError("specs must be non-empty")
    projections = []
    for slot in range(count):
        proj = None
        for attempt in range(max_retries):
            slot_seed = _slot_seed(seed, slot, attempt)
            rng = np.random.default_rng(slot_seed)
            spec = specs[int(rng.integers(len(specs)))]
            params = {
                name: float(rng.uniform(lo, hi))
                for name, (lo, hi) in sorted(spec.ranges.items())
            }
            try:
                coords = _run_generator(spec.name, data.points, params, rng)
            except GeneratorError:
                continue
            if not np.all(np.isfinite(coords)) or np.all(np.ptp(coords, axis=0) == 0.0):
                continue
            proj = Projection(
                dataset_id=data.id,
                index=slot,
                coords=coords,
                provenance={
                    "generator": spec.name,
                    "hyperparameters": params,
                    "seed": slot_seed,
                },
            )
            break
        if proj is None:
            raise GeneratorError(
                f"slot {slot}: no generator produced a valid projection "
                f"in {max_retries} attempts"
            )
        projections.append(proj)
    return ProjectionSet(dataset_id=data.id, projections=tuple(projections))
