from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fddea.acquisition import federated_lcb, federated_mean_sigma, flcb, normalize_columns
from fddea.secagg import Keyring, Salt, compute_mask, gen_group_params, keygen


def _mean_sigma_brute(preds, server):
    K = len(preds)
    N, M = server.shape
    mean = np.empty((N, M))
    sigma = np.empty((N, M))
    for n in range(N):
        for m in range(M):
            vals = [p[n, m] for p in preds]
            mu = (sum(vals) / K + server[n, m]) / 2
            mean[n, m] = mu
            sigma[n, m] = (sum((v - mu) ** 2 for v in vals + [server[n, m]]) / K) ** 0.5
    return mean, sigma


def test_hand_worked_two_client_case():
    mean, sigma = federated_mean_sigma([[1.0], [3.0]], [2.0])
    assert mean[0, 0] == 2.0 and sigma[0, 0] == 1.0


def test_matches_elementwise_oracle():
    rng = np.random.default_rng(0)
    preds = [rng.normal(size=(15, 3)) for _ in range(4)]
    server = rng.normal(size=(15, 3))
    mean, sigma = federated_mean_sigma(preds, server)
    m2, s2 = _mean_sigma_brute(preds, server)
    assert np.allclose(mean, m2, atol=1e-12) and np.allclose(sigma, s2, atol=1e-12)


def test_agreeing_predictions_give_zero_sigma():
    c = np.full((5, 2), 3.5)
    mean, sigma = federated_mean_sigma([c, c, c], c)
    assert np.array_equal(mean, c) and np.array_equal(sigma, np.zeros((5, 2)))


def test_errors():
    with pytest.raises(ValueError):
        federated_mean_sigma([np.zeros((2, 2))], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        federated_mean_sigma([np.zeros((2, 2)), np.zeros((3, 2))], np.zeros((2, 2)))
    with pytest.raises(ValueError):
        flcb(np.zeros((2, 2)), np.zeros((2, 3)))


def _masked_setup(K=4, N=20, M=3, scale=10.0, seed=0):
    params = gen_group_params("test-64bit")
    keys = [keygen(params, seed + i) for i in range(K)]
    pubs = {i: k.public for i, k in enumerate(keys)}
    rings = [Keyring.from_publics(params, i, keys[i], pubs) for i in range(K)]
    rng = np.random.default_rng(seed)
    preds = [rng.random((N, M)) for _ in range(K)]
    server = rng.random((N, M))
    salt = Salt(0, 0, b"s" * 16)
    masks = [compute_mask(i, rings[i], salt, (N, M), scale) for i in range(K)]
    return preds, server, masks


def test_zero_scale_reproduces_plaintext_bit_for_bit():
    preds, server, masks = _masked_setup(scale=0.0)
    masked = [preds[0]] + [p + m for p, m in zip(preds[1:], masks[1:])]
    # both sides sum in the aggregator's order: others, then own, then own mask
    plain_sum = preds[1] + preds[2] + preds[3] + preds[0] + np.zeros_like(preds[0])
    exact = masked[1] + masked[2] + masked[3] + preds[0] + masks[0]
    a = federated_lcb(preds, server, client_sum=plain_sum)
    b = federated_lcb(masked, server, client_sum=exact)
    assert np.array_equal(a.flcb, b.flcb)
    assert np.array_equal(np.argmin(a.flcb, axis=0), np.argmin(b.flcb, axis=0))


def test_mean_depends_only_on_exact_sum():
    preds, server, masks = _masked_setup(scale=100.0)
    exact = sum(preds)
    masked = [preds[0]] + [p + m for p, m in zip(preds[1:], masks[1:])]
    m1, s1 = federated_mean_sigma(masked, server, client_sum=exact)
    m2, s2 = federated_mean_sigma(masked[:1] + masked[:0:-1], server, client_sum=exact)
    m3, _ = federated_mean_sigma(preds, server)
    assert np.allclose(m1, m2, atol=1e-12) and np.allclose(m1, m3, atol=1e-12)
    assert np.allclose(s1, s2, atol=1e-12)
    # masked inputs inflate the spread
    assert s1.mean() > 5 * federated_mean_sigma(preds, server)[1].mean()


def test_normalize_examples():
    out = normalize_columns(np.array([[1.0, 7.0], [2.0, 7.0], [3.0, 7.0]]))
    assert np.allclose(out[:, 0], [0, 0.5, 1]) and np.array_equal(out[:, 1], np.zeros(3))
    R = normalize_columns(np.random.default_rng(1).random((100, 3)))
    assert np.allclose(R.min(axis=0), 0) and np.allclose(R.max(axis=0), 1)


@settings(max_examples=50, deadline=None)
@given(X=arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)),
       a=st.floats(0.01, 100), b=st.floats(-100, 100))
def test_normalize_is_affine_invariant(X, a, b):
    lhs = normalize_columns(a * X + b)
    rhs = normalize_columns(X)
    # columns that collapse to a constant after rounding are all-zero on both sides
    span = X.max(axis=0) - X.min(axis=0)
    ok = span > 1e-6 * (np.abs(X).max(axis=0) + 1)
    assert np.allclose(lhs[:, ok], rhs[:, ok], atol=1e-6)
    assert np.all((lhs >= 0) & (lhs <= 1))


@settings(max_examples=50, deadline=None)
@given(K=st.integers(2, 6), seed=st.integers(0, 1000))
def test_sigma_is_nonnegative(K, seed):
    rng = np.random.default_rng(seed)
    preds = [rng.normal(size=(6, 2)) * 10 for _ in range(K)]
    _, sigma = federated_mean_sigma(preds, rng.normal(size=(6, 2)))
    assert np.all(sigma >= 0)


def test_flcb_examples():
    m = np.array([[0.2, 0.4]])
    s = np.array([[0.1, 0.3]])
    assert np.allclose(flcb(m, s, 2.0), [[0.0, -0.2]])
    assert np.array_equal(flcb(m, s, 0.0), m)
    assert np.array_equal(flcb(m, m, 1.0), np.zeros_like(m))


def test_unnormalized_variant_uses_raw_scale():
    preds = [np.array([[1.0], [5.0]]), np.array([[3.0], [9.0]])]
    server = np.array([[2.0], [7.0]])
    out = federated_lcb(preds, server, t=1.0, normalize=False)
    assert np.allclose(out.flcb, out.mean - out.sigma)
    norm = federated_lcb(preds, server, t=1.0)
    assert np.all((norm.mean_norm >= 0) & (norm.mean_norm <= 1))
