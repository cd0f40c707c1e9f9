"""Reference-vector-guided evolutionary search over a vector-valued score.

Fitness evaluation is left to the caller: the federation layer computes the
acquisition values of each candidate batch and hands them back here for
environmental selection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .pareto import simplex_lattice

DEFAULT_LAYERS = {
    3: [(13, 1.0)],
    5: [(5, 1.0)],
    10: [(3, 1.0), (1, 0.5)],
}


@dataclass
class ReferenceVectorSet:
    vectors: np.ndarray
    originals: np.ndarray = field(repr=False)

    def __len__(self):
        return self.vectors.shape[0]

    def neighbor_angles(self):
        """Smallest angle from each vector to any other vector (γ)."""
        V = self.vectors
        cos = np.clip(V @ V.T, -1.0, 1.0)
        np.fill_diagonal(cos, 0.0)
        return np.arccos(cos).min(axis=1)


def _unit_rows(V):
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def simplex_lattice_refvecs(M, layers):
    """Unit reference vectors from one or more Das-Dennis layers.

    Each layer is ``(H, shrink)``; ``shrink < 1`` pulls the layer's lattice
    toward the simplex centroid before normalization.
    """
    parts = []
    for H, shrink in layers:
        W = simplex_lattice(int(H), M)
        parts.append(shrink * W + (1.0 - shrink) / M)
    V = _unit_rows(np.vstack(parts))
    return ReferenceVectorSet(V, V.copy())


def default_layers(M):
    if M in DEFAULT_LAYERS:
        return DEFAULT_LAYERS[M]
    H = 1
    while math.comb(H + M, M - 1) <= 100:
        H += 1
    return [(H, 1.0)]


def population_size(M):
    return sum(math.comb(H + M - 1, M - 1) for H, _ in default_layers(M))


def adapt_refvecs(refvecs, fitness_ranges):
    """Scale the original vectors by per-objective ranges and renormalize.

    A zero range leaves that component unscaled.
    """
    r = np.asarray(fitness_ranges, dtype=np.float64)
    r = np.where(r > 0, r, 1.0)
    return ReferenceVectorSet(_unit_rows(refvecs.originals * r), refvecs.originals)


def sbx(p1, p2, rng, eta=15.0, prob=1.0):
    """Simulated binary crossover; returns two children per parent pair."""
    n, D = p1.shape
    mu = rng.random((n, D))
    beta = np.where(mu <= 0.5, (2 * mu) ** (1 / (eta + 1)),
                    (2 - 2 * mu) ** (-1 / (eta + 1)))
    beta = beta * np.where(rng.integers(0, 2, (n, D)) == 1, -1.0, 1.0)
    beta[rng.random((n, D)) < 0.5] = 1.0
    beta[rng.random(n) > prob] = 1.0
    mid = (p1 + p2) / 2
    half = (p1 - p2) / 2
    # uncrossed variables are copied exactly rather than rebuilt from mid ± half
    keep = beta == 1.0
    c1 = np.where(keep, p1, mid + beta * half)
    c2 = np.where(keep, p2, mid - beta * half)
    return np.vstack([c1, c2])


def polynomial_mutation(X, lower, upper, rng, eta=20.0, prob=None):
    """Bounded polynomial mutation; ``prob`` is per variable (default 1/D)."""
    n, D = X.shape
    prob = 1.0 / D if prob is None else prob
    site = rng.random((n, D)) < prob
    mu = rng.random((n, D))
    X = np.clip(X, lower, upper)
    span = np.broadcast_to(upper - lower, X.shape)
    lo = np.broadcast_to(lower, X.shape)
    hi = np.broadcast_to(upper, X.shape)
    Y = X.copy()

    down = site & (mu <= 0.5)
    xd = X[down]
    sd = span[down]
    md = mu[down]
    delta = (2 * md + (1 - 2 * md) * (1 - (xd - lo[down]) / sd) ** (eta + 1)) ** (1 / (eta + 1)) - 1
    Y[down] = xd + sd * delta

    up = site & (mu > 0.5)
    xu = X[up]
    su = span[up]
    mu_ = mu[up]
    delta = 1 - (2 * (1 - mu_) + 2 * (mu_ - 0.5) * (1 - (hi[up] - xu) / su) ** (eta + 1)) ** (1 / (eta + 1))
    Y[up] = xu + su * delta
    return np.clip(Y, lower, upper)


def generate_offspring(parents, bounds, seed, crossover_prob=1.0, mutation_prob=None,
                       eta_c=15.0, eta_m=20.0, n_offspring=None):
    """Children via SBX and polynomial mutation (one per parent by default).

    Parents are paired by a random permutation (repeated when more children
    than parents are requested); with both probabilities at zero the
    children are the parents in shuffled order. ``seed`` may be an int or a
    numpy Generator.
    """
    X = np.asarray(parents, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("need a non-empty parent matrix")
    if X.shape[0] < 2:
        raise ValueError("need at least two parents")
    lower, upper = (np.asarray(b, dtype=np.float64) for b in bounds)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    N = X.shape[0] if n_offspring is None else int(n_offspring)
    n_pairs = (N + 1) // 2
    idx = np.concatenate([rng.permutation(X.shape[0])
                          for _ in range(-(-2 * n_pairs // X.shape[0]))])[:2 * n_pairs]
    children = sbx(X[idx[:n_pairs]], X[idx[n_pairs:]], rng, eta_c, crossover_prob)
    if mutation_prob != 0:
        children = polynomial_mutation(children, lower, upper, rng, eta_m, mutation_prob)
    return np.clip(children[:N], lower, upper)


def unique_rows(X):
    """Rows of X without exact repeats, in order of first appearance."""
    _, first = np.unique(X, axis=0, return_index=True)
    return X[np.sort(first)]


def assign_to_vectors(F, V):
    """Translate by the ideal point; return (f', norms, cosines, assigned vector)."""
    Fp = F - F.min(axis=0)
    norms = np.linalg.norm(Fp, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    cos = (Fp @ V.T) / safe[:, None]
    cos[norms == 0] = 0.0
    cos = np.clip(cos, -1.0, 1.0)
    return Fp, norms, cos, np.argmax(cos, axis=1)


def apd_select(fitness, refvecs, progress, alpha=2.0):
    """Indices of the survivors, one per populated subregion.

    Each candidate joins the subregion of its closest reference vector (by
    angle); within a subregion the smallest angle-penalized distance wins,
    lowest index on ties. The result is ordered by reference vector.
    """
    F = np.asarray(fitness, dtype=np.float64)
    if F.ndim != 2 or F.shape[0] == 0:
        raise ValueError("no candidates to select from")
    if not 0.0 <= progress <= 1.0:
        raise ValueError("progress must lie in [0, 1]")
    V = refvecs.vectors
    M = F.shape[1]
    _, norms, cos, assigned = assign_to_vectors(F, V)
    gamma = refvecs.neighbor_angles()
    theta = np.arccos(cos[np.arange(F.shape[0]), assigned])
    penalty = M * progress ** alpha * theta / gamma[assigned]
    apd = (1.0 + penalty) * norms
    chosen = []
    for j in range(V.shape[0]):
        members = np.flatnonzero(assigned == j)
        if members.size:
            chosen.append(int(members[np.argmin(apd[members])]))
    return np.asarray(chosen, dtype=int)


def adaptation_interval(t_m, frequency=0.1):
    return max(1, math.ceil(frequency * t_m))
