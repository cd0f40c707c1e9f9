"""End-to-end acceptance checks. Each test prints one PASS/FAIL line."""
from __future__ import annotations

import time
from functools import lru_cache

import numpy as np
import pytest

from fddea.federation import ExperimentConfig, run_experiment, select_query_points
from fddea.metrics import closed_form_total, comm_check, igd
from fddea.moea import default_layers, apd_select, simplex_lattice_refvecs
from fddea.secagg import (
    Keyring, Salt, check_vector, compute_mask, derive_shared_key, gen_group_params, keygen,
    make_vector,
)

from oracles import apd_brute, fronts_brute, igd_brute, select_queries_brute

SEEDS = range(11)


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}")
    return emit


@lru_cache(maxsize=None)
def full_run(problem, mode, seed):
    # the full desk-scale protocol: K=4, g0=219, budget=120, mu=5, t_m=20
    cfg = ExperimentConfig(problem=problem, M=3, D=20, mode=mode, group="test-64bit",
                           seed=seed)
    return cfg, run_experiment(cfg, keep_archive=False)


def median_igd(problem, mode):
    return float(np.median([full_run(problem, mode, s)[1].final_igd for s in SEEDS]))


def test_criterion_1_mask_cancellation(report):
    params = gen_group_params("test-64bit")
    rng = np.random.default_rng(2024)
    eps = np.finfo(float).eps
    worst = 0.0
    start = time.perf_counter()
    for trial in range(200):
        K = int(rng.choice([2, 3, 4, 8]))
        shape = (int(rng.integers(1, 231)), int(rng.integers(1, 11)))
        scale = float(10 ** rng.uniform(-3, 6))
        keys = [keygen(params, trial * 16 + i) for i in range(K)]
        pubs = {i: k.public for i, k in enumerate(keys)}
        rings = [Keyring.from_publics(params, i, keys[i], pubs) for i in range(K)]
        salt = Salt(trial, 0, rng.bytes(16))
        total = sum(compute_mask(i, rings[i], salt, shape, scale, K) for i in range(K))
        worst = max(worst, float(np.abs(total).max() / (K * eps * scale * 16)))
    elapsed = time.perf_counter() - start
    ok = worst <= 1.0 and elapsed < 5.0
    report(1, ok, f"200 trials, worst |sum| at {worst:.3f} of bound, {elapsed:.2f} s")
    assert ok


def test_criterion_2_zero_noise_equivalence(report):
    mismatches = 0
    start = time.perf_counter()
    for seed in range(3):
        base = dict(problem="DTLZ2", M=3, D=10, g0=50, budget=20, group="test-64bit",
                    seed=seed)
        plain = run_experiment(ExperimentConfig(mode="plaintext", **base))
        dh = run_experiment(ExperimentConfig(mode="dh", noise_factor=0.0, **base))
        if len(plain.queries) != len(dh.queries):
            mismatches += 1
            continue
        mismatches += sum(not np.array_equal(a, b) for a, b in zip(plain.queries, dh.queries))
    elapsed = time.perf_counter() - start
    ok = mismatches == 0 and elapsed < 120
    report(2, ok, f"{mismatches} differing query batches over 3 seeds, {elapsed:.1f} s")
    assert ok


def test_criterion_3_igd_at_desk_scale(report):
    dtlz2 = median_igd("DTLZ2", "dh")
    dtlz6 = median_igd("DTLZ6", "dh")
    ok = 0.15 <= dtlz2 <= 0.65 and 12 <= dtlz6 <= 18
    report(3, ok, f"median IGD DTLZ2 {dtlz2:.4f} in [0.15, 0.65], "
                  f"DTLZ6 {dtlz6:.3f} in [12, 18]")
    assert ok


def test_criterion_4_normalization_ablation(report):
    parts, ok = [], True
    for problem in ("DTLZ2", "DTLZ5"):
        big, wo = median_igd(problem, "dh-big"), median_igd(problem, "dh-big-wo")
        ok &= big < wo
        parts.append(f"{problem} dh-big {big:.4f} vs dh-big-wo {wo:.4f}")
    report(4, ok, "; ".join(parts))
    assert ok


def test_criterion_5_rank_hiding(report):
    _, log = full_run("DTLZ2", "dh", 0)
    rho = float(np.mean(np.abs(log.rho_samples)))
    ok = len(log.rho_samples) > 0 and rho <= 0.1
    report(5, ok, f"mean |rho| {rho:.4f} over {len(log.rho_samples)} samples")
    assert ok


def test_criterion_6_communication_accounting(report):
    results = []
    cfg, log = full_run("DTLZ2", "dh", 0)
    results.append(((4, 20, 24), comm_check(log.trace, cfg)))
    for K, t_m, n_r in ((3, 5, 4), (8, 10, 2)):
        cfg = ExperimentConfig(problem="DTLZ2", M=3, D=8, K=K, t_m=t_m, mu=2,
                               budget=2 * n_r, g0=20, N_p=15, epochs=2,
                               group="test-64bit", seed=1)
        results.append(((K, t_m, n_r), comm_check(run_experiment(cfg).trace, cfg)))
    ok = all(rep.match and rep.observed_units["total"] == closed_form_total(*triple)
             for triple, rep in results)
    detail = ", ".join(f"{triple}: {rep.observed_units['total']}/{closed_form_total(*triple)}"
                       for triple, rep in results)
    report(6, ok, f"observed/closed-form units {detail}")
    assert ok


def test_criterion_7_dh_vectors(report):
    demo = make_vector("demo-23", 6, 15)
    demo_ok = (demo.public_a, demo.public_b, demo.shared) == (8, 19, 2) \
        and check_vector(demo) == []
    params = gen_group_params("test-64bit")
    rng = np.random.default_rng(7)
    symmetric = 0
    for _ in range(50):
        a, b = (keygen(params, int(s)) for s in rng.integers(0, 2**62, size=2))
        symmetric += derive_shared_key(params, a.secret, b.public) == \
            derive_shared_key(params, b.secret, a.public)
    ok = demo_ok and symmetric == 50
    report(7, ok, f"demo 6/15 -> {demo.public_a}/{demo.public_b}, shared {demo.shared}; "
                  f"{symmetric}/50 symmetric pairs")
    assert ok


def test_criterion_8_oracle_equivalences(report):
    rng = np.random.default_rng(8)
    igd_err = 0.0
    for _ in range(5):
        R, S = rng.random((120, 3)), rng.random((60, 3))
        igd_err = max(igd_err, abs(igd(S, R) - igd_brute(S, R)))

    V = simplex_lattice_refvecs(3, default_layers(3))
    apd_bad = 0
    for seed in range(5):
        F = np.random.default_rng(seed).random((200, 3)) * [1, 2, 3]
        progress = (seed + 1) / 5
        apd_bad += apd_select(F, V, progress).tolist() != \
            apd_brute(F.tolist(), V.vectors.tolist(), progress, 2.0)

    km_bad = 0
    for seed in range(5):
        g = np.random.default_rng(50 + seed)
        X, F = g.random((80, 10)), g.random((80, 3))
        got = select_query_points(X, F, 5, seed=seed)
        pool = []
        for front in fronts_brute(F.tolist()):
            pool.extend(front)
            if len(pool) >= 5:
                break
        init = sorted(np.random.default_rng(seed).choice(len(pool), 5, replace=False))
        km_bad += not np.array_equal(got, X[select_queries_brute(X, F, 5, init)])

    ok = igd_err <= 1e-12 and apd_bad == 0 and km_bad == 0
    report(8, ok, f"IGD max error {igd_err:.1e}, APD mismatches {apd_bad}/5, "
                  f"k-means mismatches {km_bad}/5")
    assert ok


def test_criterion_9_information_flow(report):
    cfg = ExperimentConfig(problem="DTLZ2", M=3, D=8, K=4, t_m=2, mu=1, budget=50,
                           g0=20, N_p=15, epochs=2, group="test-64bit", seed=9)
    log = run_experiment(cfg)
    counts = log.violations
    ok = len(log.rounds) == 50 and sum(counts.values()) == 0
    report(9, ok, f"{len(log.rounds)} dh rounds, violations {counts}")
    assert ok
