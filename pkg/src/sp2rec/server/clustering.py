"""K-means over public item factors (bias included as an extra coordinate)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from ..core import ContractError, PublicModel


@dataclass(eq=False)
class ClusterModel:
    centroid_vec: np.ndarray
    centroid_bias: np.ndarray
    membership: np.ndarray
    counts: np.ndarray
    distortion: float
    history: list = field(default_factory=list)

    @property
    def K(self) -> int:
        return len(self.centroid_bias)

    @property
    def n_items(self) -> int:
        return len(self.membership)

    def approximate_items(self):
        """(item_bias, item_vec) as each item's cluster centroid."""
        return self.centroid_bias[self.membership], self.centroid_vec[self.membership]


def augmented_items(model: PublicModel) -> np.ndarray:
    return np.hstack([model.item_vec, model.item_bias[:, None]])


def distortion(points: np.ndarray, centers: np.ndarray, labels: np.ndarray) -> float:
    return float(np.sum((points - centers[labels]) ** 2))


def _plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = cdist(X, X[chosen[0] : chosen[0] + 1], "sqeuclidean")[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        else:
            # every point already coincides with a center
            nxt = chosen[0]
        chosen.append(nxt)
        d2 = np.minimum(d2, cdist(X, X[nxt : nxt + 1], "sqeuclidean")[:, 0])
    return X[chosen].copy()


def _update_centers(X, labels, centers):
    K = len(centers)
    counts = np.bincount(labels, minlength=K)
    new = centers.copy()
    for c in np.flatnonzero(counts).tolist():
        new[c] = X[labels == c].mean(axis=0)
    return new, counts


def lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int = 100):
    """Lloyd iterations from the given centers; ties go to the lowest cluster id.

    An empty cluster takes over the point farthest from its current center.
    Returns (centers, labels, per-iteration distortions).
    """
    centers = centers.copy()
    labels = np.argmin(cdist(X, centers, "sqeuclidean"), axis=1)
    history = [distortion(X, centers, labels)]
    for _ in range(max_iter):
        centers, counts = _update_centers(X, labels, centers)
        for c in np.flatnonzero(counts == 0).tolist():
            gaps = np.sum((X - centers[labels]) ** 2, axis=1)
            far = int(np.argmax(gaps))
            if gaps[far] <= 0:
                break
            labels[far] = c
            centers, counts = _update_centers(X, labels, centers)
        new_labels = np.argmin(cdist(X, centers, "sqeuclidean"), axis=1)
        d = distortion(X, centers, new_labels)
        assert d <= history[-1] * (1 + 1e-9) + 1e-12, "k-means distortion increased"
        history.append(d)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels, history


def kmeans_items(model: PublicModel, K: int, seed: int = 0, max_iter: int = 100) -> ClusterModel:
    """Cluster the augmented item factors [q_i, b_i] with k-means++ seeding."""
    X = augmented_items(model)
    n = len(X)
    if not 1 <= K <= n:
        raise ContractError(f"K must lie in [1, {n}], got {K}")
    if K == n:
        # singleton clusters are the exact zero-distortion optimum
        centers, labels, history = X.copy(), np.arange(n), [0.0]
    else:
        rng = np.random.default_rng(seed)
        centers, labels, history = lloyd(X, _plusplus(X, K, rng), max_iter)
    counts = np.bincount(labels, minlength=K)
    k = model.k
    return ClusterModel(
        np.ascontiguousarray(centers[:, :k]),
        np.ascontiguousarray(centers[:, k]),
        labels.astype(np.int64),
        counts,
        distortion(X, centers, labels),
        history,
    )
