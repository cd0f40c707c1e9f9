"""Federated lower confidence bound over client and server predictions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_T = 2.0


@dataclass
class AcquisitionOutput:
    mean: np.ndarray
    sigma: np.ndarray
    mean_norm: np.ndarray
    sigma_norm: np.ndarray
    flcb: np.ndarray


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix")
    return a


def federated_mean_sigma(predictions, server_prediction, client_sum=None):
    """Mean and cross-model standard deviation of K client predictions and ŷ_s.

    ``predictions`` are the K per-client matrices used for the spread. When
    some of them are masked, pass the exact unmasked total as
    ``client_sum``; the mean then depends on that total alone while the
    spread still uses the (noisy) individual matrices.
    """
    preds = [_as_matrix(p, "prediction") for p in predictions]
    server = _as_matrix(server_prediction, "server_prediction")
    K = len(preds)
    if K < 2:
        raise ValueError("need predictions from at least two clients")
    for p in preds:
        if p.shape != server.shape:
            raise ValueError(f"prediction shape {p.shape} differs from "
                             f"server prediction shape {server.shape}")
    if client_sum is None:
        client_sum = preds[0]
        for p in preds[1:]:
            client_sum = client_sum + p
    client_sum = _as_matrix(client_sum, "client_sum")
    if client_sum.shape != server.shape:
        raise ValueError("client_sum shape differs from server prediction")

    mean = (client_sum / K + server) / 2.0
    sq = (server - mean) ** 2
    for p in preds:
        sq = sq + (p - mean) ** 2
    sigma = np.sqrt(sq / K)
    return mean, sigma


def normalize_columns(matrix):
    """Per-column min-max scaling to [0, 1]; constant columns become zeros."""
    A = _as_matrix(matrix, "matrix")
    if A.shape[0] < 1:
        raise ValueError("need at least one row")
    lo = A.min(axis=0)
    span = A.max(axis=0) - lo
    out = np.zeros_like(A)
    ok = span > 0
    out[:, ok] = (A[:, ok] - lo[ok]) / span[ok]
    return out


def flcb(mean_norm, sigma_norm, t=DEFAULT_T):
    mean_norm = _as_matrix(mean_norm, "mean_norm")
    sigma_norm = _as_matrix(sigma_norm, "sigma_norm")
    if mean_norm.shape != sigma_norm.shape:
        raise ValueError("mean and sigma shapes differ")
    return mean_norm - t * sigma_norm


def federated_lcb(predictions, server_prediction, t=DEFAULT_T, client_sum=None,
                  normalize=True):
    """Full score: mean/sigma, optional normalization, then mean - t·sigma."""
    mean, sigma = federated_mean_sigma(predictions, server_prediction, client_sum)
    if normalize:
        mean_norm, sigma_norm = normalize_columns(mean), normalize_columns(sigma)
    else:
        mean_norm, sigma_norm = mean, sigma
    return AcquisitionOutput(mean, sigma, mean_norm, sigma_norm,
                             flcb(mean_norm, sigma_norm, t))
