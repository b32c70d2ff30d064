"""Target feature memory bank and K-means over it."""
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .numerics import entropy
from .thresholding import predict_open


class MemoryBank:
    """Latest unit-norm feature for each target sample, one row per sample."""

    def __init__(self, num_samples, dim):
        self.V = np.zeros((num_samples, dim))
        self.initialized = np.zeros(num_samples, dtype=bool)

    def __len__(self):
        return self.V.shape[0]

    def update(self, indices, feats):
        indices = np.asarray(indices)
        feats = np.asarray(feats, dtype=np.float64)
        if indices.ndim != 1 or feats.shape != (len(indices), self.V.shape[1]):
            raise InvalidArgument(f"feature batch {feats.shape} does not match {len(indices)} indices")
        if np.any(indices < 0) or np.any(indices >= len(self)):
            raise InvalidArgument(f"bank index out of range [0, {len(self)})")
        if len(np.unique(indices)) != len(indices):
            raise InvalidArgument("duplicate bank indices in one update")
        self.V[indices] = feats
        self.initialized[indices] = True

    def snapshot(self):
        return self.V[self.initialized].copy()


@dataclass
class ClusterModel:
    centroids: np.ndarray
    assignment: np.ndarray
    objective_history: list = field(default_factory=list)
    n_iter: int = 0

    @property
    def num_clusters(self):
        return self.centroids.shape[0]


def _sq_dists(X, C):
    return np.sum((X[:, None, :] - C[None, :, :]) ** 2, axis=2)


def kmeans_plusplus(X, Z, rng):
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    closest = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, Z):
        total = closest.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=closest / total)
        centers.append(X[idx])
        closest = np.minimum(closest, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def kmeans(X, Z, rng, max_iters=100):
    """Lloyd's algorithm with k-means++ seeding on the rows of ``X``.

    ``X`` may be a ``MemoryBank``; only initialized rows are clustered and
    uninitialized rows get assignment -1.
    """
    bank = X if isinstance(X, MemoryBank) else None
    pts = X.snapshot() if bank is not None else np.asarray(X, dtype=np.float64)
    n = pts.shape[0]
    if Z < 1 or Z > n:
        raise InvalidArgument(f"need 1 <= Z <= {n} points, got Z={Z}")
    C = kmeans_plusplus(pts, Z, rng)
    assign = None
    history = []
    it = 0
    for it in range(1, max_iters + 1):
        new_assign = np.argmin(_sq_dists(pts, C), axis=1)
        history.append(float(np.sum((pts - C[new_assign]) ** 2)))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        resid = np.sum((pts - C[assign]) ** 2, axis=1)
        for z in range(Z):
            members = assign == z
            if members.any():
                C[z] = pts[members].mean(axis=0)
        for z in range(Z):
            if not np.any(assign == z):
                far = int(np.argmax(resid))
                C[z] = pts[far]
                resid[far] = -1.0
    assign = np.argmin(_sq_dists(pts, C), axis=1)
    if bank is not None:
        full = np.full(len(bank), -1)
        full[bank.initialized] = assign
        assign = full
    return ClusterModel(C, assign, history, it)


def assign_cluster(x, clusters):
    """Index of the nearest centroid (lowest index on ties); batched over rows."""
    x = np.asarray(x, dtype=np.float64)
    C = clusters.centroids if isinstance(clusters, ClusterModel) else np.asarray(clusters)
    if x.ndim == 1:
        return int(np.argmin(np.sum((C - x) ** 2, axis=1)))
    return np.argmin(_sq_dists(x, C), axis=1)


def num_unknown_clusters(num_classes, fraction=0.5):
    return max(1, int(round(fraction * num_classes)))


def extended_pseudo_labels(probs, feats, thresholds, clusters):
    """Pseudo-label and confidence per sample.

    Known: ``(argmax, max prob)``. Unknown: ``(K + nearest cluster,
    entropy / ln K)``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    k = probs.shape[1]
    pred = predict_open(probs, thresholds)
    unknown = pred == k
    labels = pred.copy()
    conf = probs.max(axis=1)
    if np.any(unknown):
        labels[unknown] = k + assign_cluster(np.asarray(feats)[unknown], clusters)
        conf[unknown] = np.clip(entropy(probs[unknown]) / np.log(k), 0.0, 1.0)
    return labels, conf
