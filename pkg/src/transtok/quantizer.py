"""Vector quantization of embedding frames into discrete token ids.

Plain k-means under squared Euclidean distance: greedy D^2-weighted
seeding, then Lloyd iterations.  A cluster that loses all members is
re-seeded from the point currently farthest from its assigned centroid,
which keeps the objective non-increasing.  Everything is deterministic
given the seed; assignment ties go to the lowest centroid index.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

CODEBOOK_VERSION = 1


@dataclass
class Codebook:
    """Immutable result of a fit; centroids have shape (k, dim)."""

    centroids: np.ndarray

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]

    def validate(self) -> None:
        if self.centroids.ndim != 2 or self.centroids.shape[0] < 1:
            raise ValueError("centroids must be a non-empty 2-d array")
        if not np.isfinite(self.centroids).all():
            raise ValueError("centroids must be finite")


def _check_data(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1:
        raise ValueError("data must be a non-empty (n, dim) array")
    if not np.isfinite(arr).all():
        raise ValueError("data must be finite")
    return arr


def _sq_dists(data: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    """(n, k) squared Euclidean distances."""
    diff = data[:, None, :] - centroids[None, :, :]
    return np.sum(diff * diff, axis=2)


def assign(codebook: Codebook, frames) -> np.ndarray:
    """Nearest-centroid ids; argmin takes the lowest index on exact ties."""
    codebook.validate()
    arr = np.asarray(frames, dtype=np.float64)
    squeeze = arr.ndim == 1
    if squeeze:
        arr = arr[None, :]
    if arr.shape[1] != codebook.dim:
        raise ValueError(f"frame dim {arr.shape[1]} does not match codebook dim {codebook.dim}")
    ids = np.argmin(_sq_dists(arr, codebook.centroids), axis=1)
    return int(ids[0]) if squeeze else ids


def inertia(codebook: Codebook, data) -> float:
    """Sum of squared distances to the nearest centroid."""
    arr = _check_data(data)
    if arr.shape[1] != codebook.dim:
        raise ValueError(f"data dim {arr.shape[1]} does not match codebook dim {codebook.dim}")
    return float(np.sum(np.min(_sq_dists(arr, codebook.centroids), axis=1)))


def seed_centroids(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Greedy D^2 seeding: first pick uniform, later picks proportional to
    squared distance from the chosen set."""
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]))
    first = int(rng.integers(n))
    centroids[0] = data[first]
    d2 = np.sum((data - centroids[0]) ** 2, axis=1)
    for i in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # all remaining mass identical to chosen centroids: reuse points
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = data[idx]
        d2 = np.minimum(d2, np.sum((data - centroids[i]) ** 2, axis=1))
    return centroids


def lloyd_iterations(
    data: np.ndarray, centroids: np.ndarray, max_iters: int
) -> Iterator[tuple[np.ndarray, np.ndarray, float]]:
    """Yields (centroids, assignments, inertia) after each refinement, with
    inertia measured against the yielded centroids.  Stops early once the
    assignment is a fixed point."""
    centroids = centroids.copy()
    k = centroids.shape[0]
    prev_assign = None
    for _ in range(max_iters):
        d2 = _sq_dists(data, centroids)
        labels = np.argmin(d2, axis=1)
        for c in range(k):
            members = labels == c
            if members.any():
                centroids[c] = data[members].mean(axis=0)
            else:
                # steal the globally worst-fit point; zero cost for it,
                # no other point's cost rises, so inertia cannot go up
                d2 = _sq_dists(data, centroids)
                worst = int(np.argmax(np.min(d2, axis=1)))
                centroids[c] = data[worst]
                labels = np.argmin(_sq_dists(data, centroids), axis=1)
        cost = float(np.sum(np.min(_sq_dists(data, centroids), axis=1)))
        yield centroids.copy(), labels.copy(), cost
        if prev_assign is not None and np.array_equal(labels, prev_assign):
            return
        prev_assign = labels


def fit_kmeans(data, k: int, max_iters: int = 100, seed: int = 0) -> Codebook:
    arr = _check_data(data)
    if k < 1 or k > arr.shape[0]:
        raise ValueError(f"need 1 <= k <= n points, got k={k} for n={arr.shape[0]}")
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    rng = np.random.default_rng(seed)
    centroids = seed_centroids(arr, k, rng)
    for centroids, _, _ in lloyd_iterations(arr, centroids, max_iters):
        pass
    return Codebook(centroids=centroids)


def save_codebook(codebook: Codebook, path: str) -> None:
    codebook.validate()
    payload = {
        "version": CODEBOOK_VERSION,
        "k": codebook.k,
        "dim": codebook.dim,
        "centroids": codebook.centroids.tolist(),
    }
    with open(path, "w") as f:
        json.dump(payload, f)
        f.write("\n")


def load_codebook(path: str) -> Codebook:
    with open(path) as f:
        payload = json.load(f)
    if not isinstance(payload, dict) or payload.get("version") != CODEBOOK_VERSION:
        raise ValueError(f"unsupported codebook version: {payload.get('version')!r}")
    try:
        centroids = np.asarray(payload["centroids"], dtype=np.float64)
        k, dim = int(payload["k"]), int(payload["dim"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed codebook: {exc}") from exc
    if centroids.shape != (k, dim):
        raise ValueError(f"centroid shape {centroids.shape} does not match k={k}, dim={dim}")
    cb = Codebook(centroids=centroids)
    cb.validate()
    return cb
