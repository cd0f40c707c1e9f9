"""DTLZ and WFG benchmark problems, initial designs and Pareto-front samples.

All problems are minimization problems. DTLZ variables live in [0, 1];
WFG variable ``d`` (1-based) lives in [0, 2d].
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.stats import qmc

from .pareto import farthest_point_subset, nondominated_mask, simplex_lattice
from .validation import check_matrix, check_within_bounds

DTLZ_NAMES = tuple(f"DTLZ{i}" for i in range(1, 8))
WFG_NAMES = tuple(f"WFG{i}" for i in range(1, 10))
PROBLEM_NAMES = DTLZ_NAMES + WFG_NAMES

# optimal value of each DTLZ distance variable
DTLZ_OPTIMAL_DISTANCE = {
    "DTLZ1": 0.5, "DTLZ2": 0.5, "DTLZ3": 0.5, "DTLZ4": 0.5,
    "DTLZ5": 0.5, "DTLZ6": 0.0, "DTLZ7": 0.0,
}


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """A synthetic multi-objective test problem."""

    name: str
    M: int
    D: int
    lower: np.ndarray = field(repr=False)
    upper: np.ndarray = field(repr=False)
    k_wfg: int | None = None

    @property
    def bounds(self):
        return self.lower, self.upper

    @property
    def is_wfg(self):
        return self.name.startswith("WFG")

    def evaluate(self, X):
        return evaluate(self, X)


def make_problem(name, M, D=20, k_wfg=None):
    """Build a DTLZ1-7 / WFG1-9 instance with its standard bounds.

    For WFG problems the position-parameter count defaults to ``2 * (M - 1)``.
    """
    key = str(name).upper()
    if key not in PROBLEM_NAMES:
        raise ValueError(f"unsupported problem {name!r}; "
                         f"choose from {', '.join(PROBLEM_NAMES)}")
    M = int(M)
    D = int(D)
    if M < 2:
        raise ValueError(f"need at least 2 objectives, got M={M}")
    if D < M:
        raise ValueError(f"D={D} must be >= M={M}")

    if key in DTLZ_NAMES:
        if k_wfg is not None:
            raise ValueError("k_wfg only applies to WFG problems")
        return ProblemInstance(key, M, D, np.zeros(D), np.ones(D))

    k = 2 * (M - 1) if k_wfg is None else int(k_wfg)
    if k <= 0 or k % (M - 1) != 0:
        raise ValueError(f"WFG position count k={k} must be a positive "
                         f"multiple of M-1={M - 1}")
    if k >= D:
        raise ValueError(f"WFG position count k={k} must be < D={D}")
    if key in ("WFG2", "WFG3") and (D - k) % 2 != 0:
        raise ValueError(f"{key} needs an even number of distance "
                         f"variables, got D-k={D - k}")
    upper = 2.0 * np.arange(1, D + 1)
    return ProblemInstance(key, M, D, np.zeros(D), upper, k)


def evaluate(problem, X):
    """Exact objective values of the candidate rows ``X``."""
    X = check_matrix(X, n_columns=problem.D, name="candidates")
    check_within_bounds(X, problem.lower, problem.upper, name="candidates")
    if problem.is_wfg:
        return _wfg(problem.name, X, problem.M, problem.k_wfg)
    return _dtlz(problem.name, X, problem.M)


def latin_hypercube(n, bounds, seed=None):
    """Latin-hypercube design of ``n`` points inside ``bounds = (lower, upper)``."""
    n = int(n)
    if n < 1:
        raise ValueError("latin_hypercube needs n >= 1")
    lower, upper = (np.asarray(b, dtype=np.float64) for b in bounds)
    unit = qmc.LatinHypercube(d=lower.size, rng=np.random.default_rng(seed)).random(n)
    return lower + unit * (upper - lower)


# -- DTLZ -------------------------------------------------------------------

def _dtlz_g(name, xm):
    if name in ("DTLZ1", "DTLZ3"):
        k = xm.shape[1]
        return 100.0 * (k + np.sum((xm - 0.5) ** 2
                                   - np.cos(20.0 * np.pi * (xm - 0.5)), axis=1))
    if name == "DTLZ6":
        return np.sum(xm ** 0.1, axis=1)
    if name == "DTLZ7":
        return 1.0 + 9.0 * np.mean(xm, axis=1)
    return np.sum((xm - 0.5) ** 2, axis=1)


def _linear_front(x, M):
    # f_m = prod_{i < M-1-m} x_i * (1 - x_{M-1-m})   (0-based m, m > 0)
    n = x.shape[0]
    cum = np.hstack([np.ones((n, 1)), np.cumprod(x, axis=1)])
    F = np.empty((n, M))
    for m in range(M):
        j = M - 1 - m
        F[:, m] = cum[:, j] * (1.0 - x[:, j] if m > 0 else 1.0)
    return F


def _sphere_front(theta, M):
    n = theta.shape[0]
    cos = np.cos(theta)
    sin = np.sin(theta)
    cum = np.hstack([np.ones((n, 1)), np.cumprod(cos, axis=1)])
    F = np.empty((n, M))
    for m in range(M):
        j = M - 1 - m
        F[:, m] = cum[:, j] * (sin[:, j] if m > 0 else 1.0)
    return F


def _dtlz(name, X, M):
    xp = X[:, :M - 1]
    g = _dtlz_g(name, X[:, M - 1:])
    if name == "DTLZ1":
        return 0.5 * (1.0 + g)[:, None] * _linear_front(xp, M)
    if name in ("DTLZ2", "DTLZ3"):
        return (1.0 + g)[:, None] * _sphere_front(xp * np.pi / 2, M)
    if name == "DTLZ4":
        return (1.0 + g)[:, None] * _sphere_front(xp ** 100 * np.pi / 2, M)
    if name in ("DTLZ5", "DTLZ6"):
        return (1.0 + g)[:, None] * _sphere_front(_dtlz5_theta(xp, g), M)
    # DTLZ7
    h = M - np.sum(xp / (1.0 + g)[:, None] * (1.0 + np.sin(3.0 * np.pi * xp)), axis=1)
    return np.hstack([xp, ((1.0 + g) * h)[:, None]])


def _dtlz5_theta(xp, g):
    theta = np.empty_like(xp)
    theta[:, 0] = xp[:, 0] * np.pi / 2
    if xp.shape[1] > 1:
        gg = g[:, None]
        theta[:, 1:] = np.pi / (4.0 * (1.0 + gg)) * (1.0 + 2.0 * gg * xp[:, 1:])
    return theta


# -- WFG transformations ----------------------------------------------------

def _clip01(y):
    return np.clip(y, 0.0, 1.0)


def b_poly(y, alpha):
    return _clip01(y ** alpha)


def b_flat(y, A, B, C):
    out = (A + np.minimum(0.0, np.floor(y - B)) * A * (B - y) / B
           - np.minimum(0.0, np.floor(C - y)) * (1.0 - A) * (y - C) / (1.0 - C))
    return _clip01(out)


def b_param(y, u, A, B, C):
    v = A - (1.0 - 2.0 * u) * np.abs(np.floor(0.5 - u) + A)
    return _clip01(y ** (B + (C - B) * v))


def s_linear(y, A):
    return _clip01(np.abs(y - A) / np.abs(np.floor(A - y) + A))


def s_decept(y, A, B, C):
    tmp1 = np.floor(y - A + B) * (1.0 - C + (A - B) / B) / (A - B)
    tmp2 = np.floor(A + B - y) * (1.0 - C + (1.0 - A - B) / B) / (1.0 - A - B)
    return _clip01(1.0 + (np.abs(y - A) - B) * (tmp1 + tmp2 + 1.0 / B))


def s_multi(y, A, B, C):
    tmp1 = np.abs(y - C) / (2.0 * (np.floor(C - y) + C))
    tmp2 = (4.0 * A + 2.0) * np.pi * (0.5 - tmp1)
    return _clip01((1.0 + np.cos(tmp2) + 4.0 * B * tmp1 ** 2) / (B + 2.0))


def r_sum(y, w):
    w = np.asarray(w, dtype=np.float64)
    return _clip01(y @ w / w.sum())


def r_nonsep(y, A):
    m = y.shape[1]
    total = np.zeros(y.shape[0])
    for j in range(m):
        total += y[:, j]
        for k in range(A - 1):
            total += np.abs(y[:, j] - y[:, (j + 1 + k) % m])
    ca = -(-A // 2)
    return _clip01(total / (m / A * ca * (1.0 + 2.0 * A - 2.0 * ca)))


def _groups(n, M, k):
    size = k // (M - 1)
    pos = [slice(i * size, (i + 1) * size) for i in range(M - 1)]
    return pos, slice(k, n)


def _reduce_sum(y, M, k, weights=None):
    n = y.shape[1]
    w = np.ones(n) if weights is None else weights
    pos, dist = _groups(n, M, k)
    cols = [r_sum(y[:, s], w[s]) for s in pos] + [r_sum(y[:, dist], w[dist])]
    return np.column_stack(cols)


def _reduce_nonsep(y, M, k):
    n = y.shape[1]
    pos, dist = _groups(n, M, k)
    cols = [r_nonsep(y[:, s], k // (M - 1)) for s in pos]
    cols.append(r_nonsep(y[:, dist], n - k))
    return np.column_stack(cols)


# -- WFG shapes -------------------------------------------------------------

def _shape(x, up, down):
    """h_m = prod_{i < M-1-m} up(x_i) * down(x_{M-1-m}) (0-based m)."""
    n, M1 = x.shape
    M = M1 + 1
    cum = np.hstack([np.ones((n, 1)), np.cumprod(up(x), axis=1)])
    dn = down(x)
    h = np.empty((n, M))
    for m in range(M):
        j = M - 1 - m
        h[:, m] = cum[:, j] * (dn[:, j] if m > 0 else 1.0)
    return h


def _concave(x):
    return _shape(x, lambda v: np.sin(v * np.pi / 2), lambda v: np.cos(v * np.pi / 2))


def _convex(x):
    return _shape(x, lambda v: 1.0 - np.cos(v * np.pi / 2),
                  lambda v: 1.0 - np.sin(v * np.pi / 2))


def _linear(x):
    return _shape(x, lambda v: v, lambda v: 1.0 - v)


def _mixed(x1, A=5, alpha=1.0):
    tmp = 2.0 * A * np.pi
    return (1.0 - x1 - np.cos(tmp * x1 + np.pi / 2) / tmp) ** alpha


def _disc(x1, A=5, alpha=1.0, beta=1.0):
    return 1.0 - x1 ** alpha * np.cos(A * x1 ** beta * np.pi) ** 2


def _wfg_shape(name, x):
    if name == "WFG1":
        h = _convex(x)
        h[:, -1] = _mixed(x[:, 0])
    elif name == "WFG2":
        h = _convex(x)
        h[:, -1] = _disc(x[:, 0])
    elif name == "WFG3":
        h = _linear(x)
    else:
        h = _concave(x)
    return h


def _wfg_positions(name, t):
    """Map reduced parameters t (rows x M) to shape arguments x_1..x_{M-1}."""
    M = t.shape[1]
    A = np.ones(M - 1)
    if name == "WFG3":
        A[1:] = 0.0
    tM = t[:, -1:]
    return np.maximum(tM, A) * (t[:, :-1] - 0.5) + 0.5


def _wfg_transform(name, Z, M, k):
    n = Z.shape[1]
    y = Z / (2.0 * np.arange(1, n + 1))
    BP = (0.98 / 49.98, 0.02, 50.0)
    if name == "WFG1":
        y = y.copy()
        y[:, k:] = s_linear(y[:, k:], 0.35)
        y[:, k:] = b_flat(y[:, k:], 0.8, 0.75, 0.85)
        y = b_poly(y, 0.02)
        return _reduce_sum(y, M, k, weights=2.0 * np.arange(1, n + 1))
    if name in ("WFG2", "WFG3"):
        y = y.copy()
        y[:, k:] = s_linear(y[:, k:], 0.35)
        pairs = [r_nonsep(y[:, k + 2 * i:k + 2 * i + 2], 2) for i in range((n - k) // 2)]
        y = np.column_stack([y[:, :k]] + pairs)
        return _reduce_sum(y, M, k)
    if name == "WFG4":
        return _reduce_sum(s_multi(y, 30, 10, 0.35), M, k)
    if name == "WFG5":
        return _reduce_sum(s_decept(y, 0.35, 0.001, 0.05), M, k)
    if name == "WFG6":
        y = y.copy()
        y[:, k:] = s_linear(y[:, k:], 0.35)
        return _reduce_nonsep(y, M, k)
    if name == "WFG7":
        y = y.copy()
        for i in range(k):
            u = r_sum(y[:, i + 1:], np.ones(n - i - 1))
            y[:, i] = b_param(y[:, i], u, *BP)
        y[:, k:] = s_linear(y[:, k:], 0.35)
        return _reduce_sum(y, M, k)
    if name == "WFG8":
        y0 = y
        y = y.copy()
        for i in range(k, n):
            u = r_sum(y0[:, :i], np.ones(i))
            y[:, i] = b_param(y0[:, i], u, *BP)
        y[:, k:] = s_linear(y[:, k:], 0.35)
        return _reduce_sum(y, M, k)
    if name == "WFG9":
        y0 = y
        y = y.copy()
        for i in range(n - 1):
            u = r_sum(y0[:, i + 1:], np.ones(n - i - 1))
            y[:, i] = b_param(y0[:, i], u, *BP)
        y[:, :k] = s_decept(y[:, :k], 0.35, 0.001, 0.05)
        y[:, k:] = s_multi(y[:, k:], 30, 95, 0.35)
        return _reduce_nonsep(y, M, k)
    raise ValueError(name)


def _wfg(name, Z, M, k):
    t = _wfg_transform(name, Z, M, k)
    x = _wfg_positions(name, t)
    h = _wfg_shape(name, x)
    S = 2.0 * np.arange(1, M + 1)
    return t[:, -1:] + S * h


# -- Pareto fronts ----------------------------------------------------------

def _lattice_for(n, M):
    H = 1
    while comb(H + 1 + M - 1, M - 1) <= n:
        H += 1
    return simplex_lattice(H, M)


def _dense_front(F_of, dim, n, seed=0):
    """Nondominated subset of dense random samples, thinned to n points."""
    rng = np.random.default_rng(seed)
    n_samples = int(min(max(20 * n, 5000), 40000))
    P = rng.random((n_samples, dim))
    F = F_of(P)
    F = F[nondominated_mask(F)]
    return farthest_point_subset(F, n)


def sample_pareto_front(problem, n):
    """Reference points on the analytic Pareto front of ``problem``.

    Lattice-based fronts return the largest simplex lattice with at most
    ``n`` points; sampled fronts return exactly ``n`` points (fewer only if
    the nondominated sample is smaller).
    """
    M = problem.M
    n = int(n)
    if n < M:
        raise ValueError(f"need n >= M={M} reference points, got {n}")
    name = problem.name

    if name == "DTLZ1":
        return 0.5 * _lattice_for(n, M)
    if name in ("DTLZ2", "DTLZ3", "DTLZ4"):
        W = _lattice_for(n, M)
        return W / np.linalg.norm(W, axis=1, keepdims=True)
    if name in ("DTLZ5", "DTLZ6"):
        xp = np.full((n, M - 1), 0.5)
        xp[:, 0] = np.linspace(0.0, 1.0, n)
        return _sphere_front(_dtlz5_theta(xp, np.zeros(n)), M)
    if name == "DTLZ7":
        def f(P):
            h = M - np.sum(P / 2.0 * (1.0 + np.sin(3.0 * np.pi * P)), axis=1)
            return np.hstack([P, (2.0 * h)[:, None]])
        return _dense_front(f, M - 1, n)

    S = 2.0 * np.arange(1, M + 1)
    if name == "WFG3":
        x = np.full((n, M - 1), 0.5)
        x[:, 0] = np.linspace(0.0, 1.0, n)
        return S * _linear(x)
    if name in ("WFG1", "WFG2"):
        return _dense_front(lambda P: S * _wfg_shape(name, P), M - 1, n)
    W = _lattice_for(n, M)
    return S * W / np.linalg.norm(W, axis=1, keepdims=True)


def optimal_solutions(problem, position):
    """Decision vectors on the Pareto set for the given position parameters.

    ``position`` has ``M - 1`` columns in [0, 1]. Only DTLZ1-6 are supported:
    their distance variables share one optimal constant.
    """
    if problem.name not in DTLZ_OPTIMAL_DISTANCE or problem.name == "DTLZ7":
        raise ValueError(f"no closed-form Pareto set for {problem.name}")
    position = check_matrix(position, n_columns=problem.M - 1, name="position")
    X = np.full((position.shape[0], problem.D), DTLZ_OPTIMAL_DISTANCE[problem.name])
    X[:, :problem.M - 1] = position
    return X
