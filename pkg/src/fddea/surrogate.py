"""Radial-basis-function network surrogate and federated weight averaging.

The network has one Gaussian hidden layer shared by all M outputs, so a
trained model is fully described by one flat weight vector. That vector is
what clients mask and the server averages.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .cluster import lloyd, random_init, sq_distances
from .validation import check_matrix

MIN_WIDTH = 1e-6


def default_n_centers(n_features, n_outputs):
    return int(round(np.sqrt(n_outputs + n_features))) + 3


def _safe_range(lo, hi):
    r = hi - lo
    return np.where(r > 0, r, 1.0)


class RBFNRegressor(RegressorMixin, BaseEstimator):
    """Gaussian RBF network trained by k-means + least squares + gradient descent.

    Parameters
    ----------
    n_centers : int or None
        Hidden units. ``None`` uses ``round(sqrt(M + D)) + 3``.
    epochs : int
        Full-batch gradient-descent epochs after the least-squares start.
    learning_rate : float
        Step size, applied on min-max normalized inputs and targets.
    kmeans_iter : int
        Lloyd iterations used to place the centers.
    train_centers : bool
        If False, gradient descent only updates the output layer.
    warm_start : bool
        Start from the current centers and keep the input scaling of the
        previous fit.
    refit_centers : bool
        On a warm start, run k-means seeded by the current centers; if False
        the current centers are used as they are.
    random_state : int or None
        Seeds the k-means initialization of a cold fit.
    ridge : float
        Tikhonov penalty for the least-squares start of the output layer,
        relative to the mean diagonal of the Gram matrix (bias unpenalized).
        Keeps the network from extrapolating far outside the target range.

    Attributes
    ----------
    centers_ : ndarray (C, D), normalized input space
    widths_ : ndarray (C,)
    output_weights_ : ndarray (C + 1, M), last row is the bias
    loss_history_ : list of float, training MSE before and after each epoch
    center_fallback_ : bool, True if fewer rows than centers forced C = n
    """

    def __init__(self, n_centers=None, epochs=20, learning_rate=0.06,
                 kmeans_iter=10, train_centers=True, warm_start=False,
                 random_state=None, ridge=1e-2, refit_centers=True):
        self.n_centers = n_centers
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.kmeans_iter = kmeans_iter
        self.train_centers = train_centers
        self.warm_start = warm_start
        self.random_state = random_state
        self.ridge = ridge
        self.refit_centers = refit_centers

    # -- fitting --------------------------------------------------------

    def fit(self, X, y):
        X = check_matrix(X, name="X")
        Y = np.asarray(y, dtype=np.float64)
        if Y.ndim == 1:
            Y = Y[:, None]
        Y = check_matrix(Y, name="y")
        if X.shape[0] != Y.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {Y.shape[0]}")
        if int(self.epochs) < 0:
            raise ValueError("epochs must be >= 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        n, D = X.shape
        M = Y.shape[1]

        warm = self.warm_start and hasattr(self, "centers_")
        if warm:
            if self.centers_.shape[1] != D or self.output_weights_.shape[1] != M:
                raise ValueError("warm-start model shape does not match the data")
            C = self.centers_.shape[0]
            self.center_fallback_ = False
        else:
            C = self.n_centers or default_n_centers(D, M)
            self.center_fallback_ = n < C
            C = min(C, n)
            self.x_min_ = X.min(axis=0)
            self.x_range_ = _safe_range(self.x_min_, X.max(axis=0))

        self.y_min_ = Y.min(axis=0)
        self.y_range_ = _safe_range(self.y_min_, Y.max(axis=0))
        Xn = (X - self.x_min_) / self.x_range_
        Yn = (Y - self.y_min_) / self.y_range_

        if warm and not self.refit_centers:
            centers = self.centers_.copy()
        else:
            if warm:
                init = self.centers_
            else:
                init = random_init(Xn, C, np.random.default_rng(self.random_state))
            centers, _ = lloyd(Xn, init, max_iter=int(self.kmeans_iter))
        widths = np.full(C, self._width_heuristic(centers))
        W = self._solve_output(Xn, Yn, centers, widths)

        self.centers_, self.widths_, self.output_weights_ = self._descend(
            Xn, Yn, centers, widths, W)
        self.n_features_in_ = D
        self.n_outputs_ = M
        return self

    @staticmethod
    def _width_heuristic(centers):
        C = centers.shape[0]
        if C < 2:
            return 1.0
        d_max = np.sqrt(sq_distances(centers, centers).max())
        return d_max / np.sqrt(2.0 * C) if d_max > 0 else 1.0

    @staticmethod
    def _design(Xn, centers, widths):
        r2 = sq_distances(Xn, centers)
        phi = np.exp(-r2 / (2.0 * widths ** 2))
        return phi, r2

    def _solve_output(self, Xn, Yn, centers, widths):
        phi, _ = self._design(Xn, centers, widths)
        A = np.hstack([phi, np.ones((Xn.shape[0], 1))])
        if not self.ridge:
            W, *_ = np.linalg.lstsq(A, Yn, rcond=None)
            return W
        G = A.T @ A
        penalty = np.full(G.shape[0], self.ridge * np.trace(G) / G.shape[0])
        penalty[-1] = 0.0
        W, *_ = np.linalg.lstsq(G + np.diag(penalty), A.T @ Yn, rcond=None)
        return W

    def _descend(self, Xn, Yn, centers, widths, W):
        n, M = Yn.shape
        C = centers.shape[0]
        scale = 2.0 / (n * M)
        lr = float(self.learning_rate)

        def loss_and_grads(c, w, Wt):
            phi, r2 = self._design(Xn, c, w)
            A = np.hstack([phi, np.ones((n, 1))])
            E = A @ Wt - Yn
            loss = float(np.mean(E ** 2))
            gW = scale * A.T @ E
            if not self.train_centers:
                return loss, None, None, gW
            G = scale * (E @ Wt[:C].T) * phi
            gc = (G.T @ Xn - G.sum(axis=0)[:, None] * c) / (w ** 2)[:, None]
            gw = (G * r2).sum(axis=0) / w ** 3
            return loss, gc, gw, gW

        loss, gc, gw, gW = loss_and_grads(centers, widths, W)
        best = (loss, centers, widths, W)
        history = [loss]
        for _ in range(int(self.epochs)):
            W = W - lr * gW
            if gc is not None:
                centers = centers - lr * gc
                widths = np.maximum(widths - lr * gw, MIN_WIDTH)
            loss, gc, gw, gW = loss_and_grads(centers, widths, W)
            history.append(loss)
            if loss < best[0]:
                best = (loss, centers, widths, W)
        self.loss_history_ = history
        self.training_loss_ = best[0]
        return best[1].copy(), best[2].copy(), best[3].copy()

    # -- prediction -----------------------------------------------------

    def predict(self, X):
        check_is_fitted(self, "output_weights_")
        X = check_matrix(X, n_columns=self.n_features_in_, name="X")
        Xn = (X - self.x_min_) / self.x_range_
        phi, _ = self._design(Xn, self.centers_, self.widths_)
        out = phi @ self.output_weights_[:-1] + self.output_weights_[-1]
        return out * self.y_range_ + self.y_min_

    # -- flat weight vector ----------------------------------------------

    @property
    def weight_shape(self):
        check_is_fitted(self, "output_weights_")
        return self.centers_.shape[0], self.n_features_in_, self.n_outputs_

    def get_weights(self):
        """Flat vector: x_min, x_range, y_min, y_range, centers, widths, output weights."""
        check_is_fitted(self, "output_weights_")
        return np.concatenate([
            self.x_min_, self.x_range_, self.y_min_, self.y_range_,
            self.centers_.ravel(), self.widths_, self.output_weights_.ravel()])

    def set_weights(self, omega, n_centers, n_features, n_outputs):
        omega = np.asarray(omega, dtype=np.float64)
        C, D, M = int(n_centers), int(n_features), int(n_outputs)
        expected = weight_vector_size(C, D, M)
        if omega.shape != (expected,):
            raise ValueError(f"weight vector has shape {omega.shape}, "
                             f"expected ({expected},)")
        parts = np.split(omega, np.cumsum([D, D, M, M, C * D, C]))
        self.x_min_, self.x_range_, self.y_min_, self.y_range_ = (
            p.copy() for p in parts[:4])
        self.centers_ = parts[4].reshape(C, D).copy()
        self.widths_ = np.maximum(parts[5], MIN_WIDTH)
        self.output_weights_ = parts[6].reshape(C + 1, M).copy()
        self.n_features_in_ = D
        self.n_outputs_ = M
        return self

    @classmethod
    def from_weights(cls, omega, n_centers, n_features, n_outputs, **params):
        return cls(**params).set_weights(omega, n_centers, n_features, n_outputs)


def weight_vector_size(n_centers, n_features, n_outputs):
    C, D, M = n_centers, n_features, n_outputs
    return 2 * D + 2 * M + C * D + C + (C + 1) * M


def initial_model(lower, upper, n_outputs, seed, n_centers=None, **params):
    """Untrained model whose input scaling is the box ``[lower, upper]`` and
    whose centers are uniform in the normalized box. Used as the shared
    starting point so that client centers stay index-aligned."""
    lower = np.asarray(lower, dtype=np.float64)
    upper = np.asarray(upper, dtype=np.float64)
    D = lower.size
    C = n_centers or default_n_centers(D, n_outputs)
    model = RBFNRegressor(n_centers=C, **params)
    model.x_min_ = lower.copy()
    model.x_range_ = _safe_range(lower, upper)
    model.y_min_ = np.zeros(n_outputs)
    model.y_range_ = np.ones(n_outputs)
    model.centers_ = np.random.default_rng(seed).random((C, D))
    model.widths_ = np.full(C, RBFNRegressor._width_heuristic(model.centers_))
    model.output_weights_ = np.zeros((C + 1, n_outputs))
    model.n_features_in_ = D
    model.n_outputs_ = n_outputs
    return model


# -- functional surface -----------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 0.06
    seed: int | None = None
    train_centers: bool = True
    ridge: float = 1e-2
    refit_centers: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")


@dataclass
class Dataset:
    """A client's evaluated points. Grows append-only."""

    inputs: np.ndarray
    targets: np.ndarray
    owner: int = 0

    def __post_init__(self):
        self.inputs = check_matrix(self.inputs, name="inputs")
        self.targets = check_matrix(self.targets, name="targets")
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ValueError("inputs and targets must have the same row count")

    def __len__(self):
        return self.inputs.shape[0]

    def append(self, X, Y):
        X = check_matrix(X, n_columns=self.inputs.shape[1], name="inputs")
        Y = check_matrix(Y, n_columns=self.targets.shape[1], name="targets")
        if X.shape[0] != Y.shape[0]:
            raise ValueError("inputs and targets must have the same row count")
        self.inputs = np.vstack([self.inputs, X])
        self.targets = np.vstack([self.targets, Y])


def train_rbfn(dataset, config=None, warm_start=None):
    """Train a surrogate on ``dataset``; ``warm_start`` is left untouched."""
    config = config or TrainConfig()
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    params = dict(epochs=config.epochs, learning_rate=config.learning_rate,
                  train_centers=config.train_centers, random_state=config.seed,
                  ridge=config.ridge, refit_centers=config.refit_centers)
    if warm_start is None:
        return RBFNRegressor(**params).fit(dataset.inputs, dataset.targets)
    model = RBFNRegressor.from_weights(
        warm_start.get_weights(), *warm_start.weight_shape,
        warm_start=True, **params)
    return model.fit(dataset.inputs, dataset.targets)


def predict(model, X):
    return model.predict(X)


def fedavg(weight_vectors, counts=None):
    """Count-weighted mean of flat weight vectors."""
    vectors = [np.asarray(v, dtype=np.float64) for v in weight_vectors]
    if not vectors:
        raise ValueError("fedavg needs at least one weight vector")
    if len({v.shape for v in vectors}) != 1:
        raise ValueError("weight vectors differ in length")
    if counts is None:
        counts = np.ones(len(vectors))
    counts = np.asarray(counts, dtype=np.float64)
    if counts.shape != (len(vectors),) or np.any(counts <= 0):
        raise ValueError("counts must be positive, one per vector")
    stacked = np.stack(vectors)
    return (counts @ stacked) / counts.sum()
