"""Pareto dominance utilities (minimization throughout)."""

from __future__ import annotations

from itertools import combinations

import numpy as np


def dominates(a, b):
    """True if ``a`` Pareto-dominates ``b``."""
    a = np.asarray(a)
    b = np.asarray(b)
    return bool(np.all(a <= b) and np.any(a < b))


def nondominated_mask(F):
    """Boolean mask of the rows of ``F`` that no other row dominates.

    Rows are visited in order of increasing coordinate sum; a dominating
    point always has a strictly smaller sum, so each row only needs to be
    checked against the rows already kept.
    """
    F = np.asarray(F, dtype=np.float64)
    n = F.shape[0]
    order = np.argsort(F.sum(axis=1), kind="stable")
    kept = np.empty((0, F.shape[1]))
    kept_idx = []
    for i in order:
        f = F[i]
        if kept.shape[0]:
            dom = np.all(kept <= f, axis=1) & np.any(kept < f, axis=1)
            if dom.any():
                continue
        kept = np.vstack([kept, f])
        kept_idx.append(i)
    mask = np.zeros(n, dtype=bool)
    mask[kept_idx] = True
    return mask


def nondominated_fronts(F):
    """Split row indices of ``F`` into successive nondominated fronts."""
    remaining = np.arange(np.asarray(F).shape[0])
    fronts = []
    while remaining.size:
        mask = nondominated_mask(np.asarray(F)[remaining])
        fronts.append(remaining[mask])
        remaining = remaining[~mask]
    return fronts


def farthest_point_subset(P, n):
    """Greedy max-min subset of ``n`` rows, seeded at the row with the
    largest first coordinate. Deterministic."""
    P = np.asarray(P, dtype=np.float64)
    if n >= P.shape[0]:
        return P.copy()
    chosen = [int(np.argmax(P[:, 0]))]
    dist = np.linalg.norm(P - P[chosen[0]], axis=1)
    for _ in range(n - 1):
        nxt = int(np.argmax(dist))
        chosen.append(nxt)
        dist = np.minimum(dist, np.linalg.norm(P - P[nxt], axis=1))
    return P[np.sort(chosen)]


def simplex_lattice(H, M):
    """Das-Dennis lattice: all points of the unit simplex in R^M whose
    coordinates are multiples of 1/H. Returns C(H+M-1, M-1) rows."""
    if H < 1 or M < 1:
        raise ValueError("H and M must be positive")
    # stars and bars: choose M-1 divider positions among H+M-1 slots
    rows = []
    for dividers in combinations(range(H + M - 1), M - 1):
        prev = -1
        counts = []
        for d in dividers:
            counts.append(d - prev - 1)
            prev = d
        counts.append(H + M - 2 - prev)
        rows.append(counts)
    return np.asarray(rows, dtype=np.float64) / H
