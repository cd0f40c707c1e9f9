"""Lloyd's k-means with deterministic tie-breaking.

Shared by the surrogate (RBF centers) and the query-point selector.
"""

from __future__ import annotations

import numpy as np


def sq_distances(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def random_init(X, k, rng):
    """k distinct rows of X chosen uniformly at random."""
    idx = rng.choice(X.shape[0], size=k, replace=False)
    return X[np.sort(idx)].copy()


def lloyd(X, init_centers, max_iter=100):
    """Run Lloyd iterations from ``init_centers``.

    An empty cluster is re-seeded at the point farthest from its own center;
    that point is then excluded from further re-seeding in the same pass.
    Stops early once assignments no longer change. Returns
    ``(centers, labels)`` with labels relative to the returned centers.
    """
    X = np.asarray(X, dtype=np.float64)
    centers = np.array(init_centers, dtype=np.float64, copy=True)
    k = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d2 = sq_distances(X, centers)
        new_labels = np.argmin(d2, axis=1)
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        own = d2[np.arange(X.shape[0]), labels]
        for j in range(k):
            members = labels == j
            if members.any():
                centers[j] = X[members].mean(axis=0)
            else:
                far = int(np.argmax(own))
                centers[j] = X[far]
                own[far] = -np.inf
    labels = np.argmin(sq_distances(X, centers), axis=1)
    return centers, labels
