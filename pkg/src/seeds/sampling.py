"""Representative-feature selection: seeded Lloyd K-means, keep the best per cluster."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .rng import RngStream

log = logging.getLogger(__name__)


@dataclass
class SamplingConfig:
    """K-means selection settings: S clusters, keep P nearest-to-centroid each."""

    clusters: int
    per_cluster: int
    max_iterations: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.clusters < 1 or self.per_cluster < 1:
            raise ValueError(f"clusters and per_cluster must be >= 1, "
                             f"got ({self.clusters}, {self.per_cluster})")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")

    @property
    def keep(self) -> int:
        return self.clusters * self.per_cluster


@dataclass
class Selection:
    """Selected row indices with the cluster each came from."""

    indices: np.ndarray  # (S*P,) into the input feature block
    cluster_ids: np.ndarray  # (S*P,)
    centroids: np.ndarray  # (S, d)


def _pairwise_sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def farthest_point_init(features: np.ndarray, k: int, rng: RngStream) -> np.ndarray:
    """First center uniform from the seeded stream, then max-min distance (ties: lowest index)."""
    b = features.shape[0]
    first = int(rng.integers(0, b))
    chosen = [first]
    min_sq = np.sum((features - features[first]) ** 2, axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(min_sq))
        chosen.append(nxt)
        min_sq = np.minimum(min_sq, np.sum((features - features[nxt]) ** 2, axis=1))
    return features[chosen].copy()


def lloyd(features: np.ndarray, k: int, max_iterations: int, rng: RngStream):
    """Plain Lloyd iterations from farthest-point centers; empty clusters keep theirs."""
    centers = farthest_point_init(features, k, rng)
    assign = np.full(features.shape[0], -1, dtype=np.intp)
    for _ in range(max_iterations):
        new_assign = np.argmin(_pairwise_sq_dists(features, centers), axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for c in range(k):
            members = features[assign == c]
            if members.shape[0] > 0:
                centers[c] = members.mean(axis=0)
    return assign, centers


def kmeans_select(features: np.ndarray, cfg: SamplingConfig) -> Selection:
    """Cluster one class's features and keep the P nearest-to-centroid per cluster.

    Under-full clusters borrow the nearest not-yet-selected rows from the global
    pool (measured to that cluster's centroid), so exactly S*P rows come back.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError(f"features must be (b, d), got shape {features.shape}")
    if not np.all(np.isfinite(features)):
        raise ValueError("non-finite feature values")
    b = features.shape[0]
    if b < cfg.keep:
        raise ValueError(f"cannot keep {cfg.clusters}x{cfg.per_cluster}={cfg.keep} "
                         f"features out of {b}")

    assign, centers = lloyd(features, cfg.clusters, cfg.max_iterations, RngStream(cfg.seed))
    sq = _pairwise_sq_dists(features, centers)

    taken = np.zeros(b, dtype=bool)
    indices: list[int] = []
    cluster_ids: list[int] = []
    shortfalls: list[tuple[int, int]] = []
    for c in range(cfg.clusters):
        members = np.flatnonzero(assign == c)
        order = members[np.argsort(sq[members, c], kind="stable")]
        kept = order[:cfg.per_cluster]
        indices.extend(int(i) for i in kept)
        cluster_ids.extend([c] * len(kept))
        taken[kept] = True
        if len(kept) < cfg.per_cluster:
            shortfalls.append((c, cfg.per_cluster - len(kept)))

    for c, need in shortfalls:
        pool = np.flatnonzero(~taken)
        order = pool[np.argsort(sq[pool, c], kind="stable")]
        borrowed = order[:need]
        log.info("cluster %d kept only %d rows; borrowing %d nearest from the pool",
                 c, cfg.per_cluster - need, need)
        indices.extend(int(i) for i in borrowed)
        cluster_ids.extend([c] * len(borrowed))
        taken[borrowed] = True

    out = Selection(np.array(indices, dtype=np.intp), np.array(cluster_ids, dtype=np.intp), centers)
    assert out.indices.shape[0] == cfg.keep
    return out
