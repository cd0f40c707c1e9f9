"""IGD, Spearman rank correlation and communication accounting."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

TRACE_COLUMNS = ("round", "iteration", "kind", "sender", "receiver", "byte_size")
ROUND_COLUMNS = ("run", "round", "evals", "igd", "rho_mean", "bytes_total")
SERVER = "server"


def igd(solutions, reference):
    """Mean distance from each reference point to its nearest solution."""
    S = np.atleast_2d(np.asarray(solutions, dtype=np.float64))
    R = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if S.size == 0 or R.size == 0:
        raise ValueError("igd needs non-empty solution and reference sets")
    if S.shape[1] != R.shape[1]:
        raise ValueError("solutions and reference differ in objective count")
    return float(cdist(R, S).min(axis=1).mean())


def rank_correlation(values_a, values_b, return_flag=False):
    """Spearman coefficient 1 - 6 Σd² / (λ(λ²-1)) with average ranks for ties.

    A constant input gives 0 and, with ``return_flag``, a True degenerate flag.
    """
    a = np.asarray(values_a, dtype=np.float64).ravel()
    b = np.asarray(values_b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise ValueError("inputs differ in length")
    lam = a.size
    if lam < 2:
        raise ValueError("need at least two values")
    if np.all(a == a[0]) or np.all(b == b[0]):
        return (0.0, True) if return_flag else 0.0
    d = rankdata(a) - rankdata(b)
    rho = 1.0 - 6.0 * float(d @ d) / (lam * (lam * lam - 1.0))
    rho = float(np.clip(rho, -1.0, 1.0))
    return (rho, False) if return_flag else rho


# -- message trace ------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    round: int
    iteration: int
    kind: str
    sender: str
    receiver: str
    byte_size: int


def payload_units(kind, n_clients):
    """Payload units under the closed-form convention.

    A prediction batch counts as one unit, a forwarded bundle as one unit
    per forwarded client batch, and a public key as one group element.
    """
    if kind in ("PublicKey", "MaskedPredictions"):
        return 1
    if kind == "ForwardBundle":
        return n_clients - 1
    return 0


def write_trace_csv(path, records):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in records:
            w.writerow([r.round, r.iteration, r.kind, r.sender, r.receiver, r.byte_size])


def read_trace_csv(path):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != TRACE_COLUMNS:
            raise ValueError(f"unexpected trace header {reader.fieldnames}")
        return [TraceRecord(int(r["round"]), int(r["iteration"]), r["kind"],
                            r["sender"], r["receiver"], int(r["byte_size"]))
                for r in reader]


def write_rounds_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ROUND_COLUMNS)
        for row in rows:
            w.writerow([row[c] for c in ROUND_COLUMNS])


def read_rounds_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- closed forms -------------------------------------------------------------

def expected_units(K, t_m, n_rounds):
    """Per-role payload units for one run of the masked protocol."""
    data = t_m * n_rounds
    key = 2 * (K - 1)
    out = {
        "server": 2 * (K - 1) * data,
        "normal_client": key + data,
        "aggregator": key + (K - 1) * data,
    }
    out["total"] = out["server"] + out["normal_client"] + out["aggregator"]
    return out


def closed_form_total(K, t_m, n_rounds):
    return (3 * K - 2) * t_m * n_rounds + 4 * (K - 1)


@dataclass
class MetricReport:
    igd: float | None = None
    rho_samples: list = field(default_factory=list)
    bytes_by_kind: dict = field(default_factory=dict)
    observed_units: dict = field(default_factory=dict)
    expected_units: dict = field(default_factory=dict)

    @property
    def deltas(self):
        return {k: self.observed_units.get(k, 0) - v
                for k, v in self.expected_units.items()}

    @property
    def match(self):
        return all(d == 0 for d in self.deltas.values())

    def describe(self):
        if self.match:
            return f"exact match: {self.observed_units['total']} units"
        parts = [f"{k} {d:+d}" for k, d in self.deltas.items() if d]
        return "mismatch (observed - expected): " + ", ".join(parts)


def _client(i):
    return f"client{i}"


def comm_check(trace, config, igd_value=None, rho_samples=()):
    """Tally payload units per role and compare with the closed forms.

    Roles follow the closed-form convention: the server's data-phase
    traffic, one client that is never the aggregator (client traffic of
    the lowest-id non-aggregator in each round) and the aggregator of each
    round. Key-phase units for the two client roles are taken from
    client0's and client1's key transcripts. Raises ValueError on a trace
    with missing key-phase or data-phase messages.
    """
    K, t_m, n_rounds = int(config.K), int(config.t_m), int(config.n_rounds)
    records = list(trace)
    bytes_by_kind = {}
    for r in records:
        bytes_by_kind[r.kind] = bytes_by_kind.get(r.kind, 0) + r.byte_size

    keys = [r for r in records if r.kind == "PublicKey"]
    if len(keys) != 2 * K * (K - 1):
        raise ValueError(f"truncated trace: {len(keys)} public-key messages, "
                         f"expected {2 * K * (K - 1)}")

    def key_units(party):
        return sum(payload_units(r.kind, K) for r in keys
                   if party in (r.sender, r.receiver))

    data = [r for r in records if r.round >= 0 and r.iteration >= 0]
    by_slot = {}
    for r in data:
        by_slot.setdefault((r.round, r.iteration), []).append(r)
    missing = [(rd, it) for rd in range(n_rounds) for it in range(t_m)
               if not any(r.kind == "ForwardBundle" for r in by_slot.get((rd, it), []))]
    if missing or len(by_slot) != n_rounds * t_m:
        raise ValueError(f"truncated trace: {len(missing)} of {n_rounds * t_m} "
                         "iterations lack a forwarded bundle")

    server = normal = aggregator = 0
    for (rd, it), msgs in sorted(by_slot.items()):
        bundle = next(r for r in msgs if r.kind == "ForwardBundle")
        c_r = bundle.receiver
        server += sum(payload_units(r.kind, K) for r in msgs
                      if SERVER in (r.sender, r.receiver))
        normal_id = _client(0) if c_r != _client(0) else _client(1)
        normal += sum(payload_units(r.kind, K) for r in msgs if r.sender == normal_id)
        aggregator += sum(payload_units(r.kind, K) for r in msgs if r.receiver == c_r)
    observed = {
        "server": server,
        "normal_client": key_units(_client(0)) + normal,
        "aggregator": key_units(_client(1)) + aggregator,
    }
    observed["total"] = observed["server"] + observed["normal_client"] + observed["aggregator"]
    return MetricReport(igd=igd_value, rho_samples=list(rho_samples),
                        bytes_by_kind=bytes_by_kind, observed_units=observed,
                        expected_units=expected_units(K, t_m, n_rounds))


def load_round_table(paths):
    """Concatenate per-round CSVs into a list of row dicts."""
    rows = []
    for p in paths:
        rows.extend(read_rounds_csv(Path(p)))
    return rows
