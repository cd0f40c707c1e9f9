"""Round protocol between one server and K clients over a message bus.

All data moves through :class:`LoopbackTransport`; parties only act on
what they received. The simulator keeps a separate audit record of
plaintext values (never handed to any party) so that information-flow
predicates can be checked against the message trace.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from ._version import __version__
from .acquisition import DEFAULT_T, federated_lcb
from .cluster import lloyd, random_init
from .metrics import TraceRecord, igd, payload_units, rank_correlation
from .moea import (adapt_refvecs, adaptation_interval, apd_select, default_layers,
                   generate_offspring, population_size, simplex_lattice_refvecs,
                   unique_rows)
from .pareto import nondominated_fronts, nondominated_mask
from .problems import latin_hypercube, make_problem, sample_pareto_front
from .secagg import (HASH_NAME, Keyring, MaskedObjectiveMatrix, Salt,
                     aggregate_masked_weights, compute_mask, encode_fixed,
                     gen_group_params, keygen, mask_weights, unmask_aggregate)
from .surrogate import (Dataset, RBFNRegressor, TrainConfig, default_n_centers,
                        initial_model, train_rbfn)

MODES = ("plaintext", "dh", "dh-big", "dh-big-wo")
NOISE_DEFAULTS = {"plaintext": 0.0, "dh": 10.0, "dh-big": 100.0, "dh-big-wo": 100.0}
HEADER_BYTES = 16
SERVER = "server"
STREAMS = {"design": 0, "keys": 1, "aggregator": 2, "variation": 3,
           "kmeans": 4, "salts": 5, "init": 6, "training": 7}


class ProtocolError(RuntimeError):
    """A round was aborted: salt reuse, misrouting or malformed payload."""


def client_name(i):
    return f"client{i}"


def stream(seed, name, *counter):
    """Independent generator for one named purpose (and optional counters)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *counter))
    return np.random.default_rng(ss)


def _stream_int(seed, name, *counter):
    ss = np.random.SeedSequence(int(seed), spawn_key=(STREAMS[name], *counter))
    return int.from_bytes(ss.generate_state(4, dtype=np.uint64).tobytes(), "big")


# -- configuration ------------------------------------------------------------

@dataclass
class ExperimentConfig:
    problem: str = "DTLZ2"
    M: int = 3
    D: int = 20
    K: int = 4
    N_p: int | None = None
    t_m: int = 20
    mu: int = 5
    g0: int = 219
    budget: int = 120
    mode: str = "dh"
    noise_factor: float | None = None
    t: float = DEFAULT_T
    normalize: bool | None = None
    group: str = "rfc-2048"
    seed: int = 0
    epochs: int = 20
    learning_rate: float = 0.06
    train_centers: bool = True
    warm_start: bool = True
    reinit_population: bool = True
    alpha: float = 2.0
    ridge: float = 1e-2
    refit_centers: bool = True

    def __post_init__(self):
        self.problem = self.problem.upper()
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.noise_factor is None:
            self.noise_factor = NOISE_DEFAULTS[self.mode]
        if self.normalize is None:
            self.normalize = self.mode != "dh-big-wo"
        if self.N_p is None:
            self.N_p = population_size(self.M)
        if self.K < 2:
            raise ValueError("K must be >= 2")
        if self.mu < 1:
            raise ValueError("mu must be >= 1")
        if self.budget < 0 or self.budget % self.mu:
            raise ValueError("budget must be a non-negative multiple of mu")
        if self.t_m < 1:
            raise ValueError("t_m must be >= 1")
        if self.g0 < 1:
            raise ValueError("g0 must be >= 1")
        if self.noise_factor < 0:
            raise ValueError("noise_factor must be >= 0")
        if self.N_p < 2:
            raise ValueError("N_p must be >= 2")
        if self.epochs < 1 or not self.learning_rate > 0:
            raise ValueError("epochs must be >= 1 and learning_rate > 0")
        gen_group_params(self.group)
        make_problem(self.problem, self.M, self.D)

    @property
    def n_rounds(self):
        return self.budget // self.mu

    @property
    def masked(self):
        return self.mode != "plaintext"

    def to_dict(self):
        return asdict(self)

    def config_hash(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# -- messages and transport ---------------------------------------------------

class Kind(str, Enum):
    PUBLIC_KEY = "PublicKey"
    SALT = "Salt"
    CANDIDATES = "Candidates"
    MASKED_PREDICTIONS = "MaskedPredictions"
    FORWARD_BUNDLE = "ForwardBundle"
    FLCB_VALUES = "FlcbValues"
    QUERY_RESULT = "QueryResult"
    GLOBAL_WEIGHTS = "GlobalWeights"
    MASKED_WEIGHTS = "MaskedWeights"


@dataclass
class Message:
    kind: Kind
    sender: str
    receiver: str
    payload: object
    round: int
    iteration: int
    byte_size: int

    def record(self):
        return TraceRecord(self.round, self.iteration, self.kind.value,
                           self.sender, self.receiver, self.byte_size)


def array_bytes(*arrays, extra=0):
    return HEADER_BYTES + 8 * sum(int(np.asarray(a).size) for a in arrays) + extra


def salt_bytes(salt):
    return 16 + len(salt.nonce)


class LoopbackTransport:
    """In-process bus. Each party has a FIFO inbox; every message is logged."""

    def __init__(self, parties):
        self.parties = tuple(parties)
        self.inbox = {p: [] for p in self.parties}
        self.log = []

    def send(self, msg):
        for end in (msg.sender, msg.receiver):
            if end not in self.inbox:
                raise ProtocolError(f"unknown party {end!r}")
        self.log.append(msg)
        self.inbox[msg.receiver].append(msg)

    def receive(self, party, kind):
        box = self.inbox[party]
        for idx, msg in enumerate(box):
            if msg.kind == kind:
                return box.pop(idx)
        raise ProtocolError(f"{party} expected a {kind.value} message, none pending")

    def drain(self):
        log, self.log = self.log, []
        return log


# -- parties ------------------------------------------------------------------

class Client:
    def __init__(self, cid, problem, dataset, params, config):
        self.cid = cid
        self.name = client_name(cid)
        self.problem = problem
        self.dataset = dataset
        self.params = params
        self.config = config
        self.keypair = keygen(params, seed=_stream_int(config.seed, "keys", cid))
        self.keyring = None
        self.model = None
        self.global_model = None
        self.noise_scale = None
        self._seen_salts = set()
        self._seen_nonces = set()
        self._publics = {}
        # per-round aggregator state
        self._candidates = None
        self._flcb = None

    # key agreement
    def send_public_keys(self, net):
        for j in range(self.config.K):
            if j != self.cid:
                net.send(Message(Kind.PUBLIC_KEY, self.name, SERVER,
                                 {"owner": self.cid, "to": j, "public": self.keypair.public},
                                 -1, -1, HEADER_BYTES + self.params.element_bytes))

    def receive_public_keys(self, net):
        for _ in range(self.config.K - 1):
            msg = net.receive(self.name, Kind.PUBLIC_KEY)
            self._publics[msg.payload["owner"]] = msg.payload["public"]
        self.keyring = Keyring.from_publics(self.params, self.cid, self.keypair, self._publics)
        self.keyring.check_complete(self.config.K)

    def _check_salt(self, salt):
        slot = (salt.domain, salt.round, salt.iteration)
        if slot in self._seen_salts or salt.nonce in self._seen_nonces:
            raise ProtocolError(f"{self.name}: salt reuse detected "
                                f"(round {salt.round}, iteration {salt.iteration})")
        self._seen_salts.add(slot)
        self._seen_nonces.add(salt.nonce)

    # model updates
    def receive_global(self, net):
        msg = net.receive(self.name, Kind.GLOBAL_WEIGHTS)
        omega, shape = msg.payload["weights"], msg.payload["shape"]
        self.global_model = RBFNRegressor.from_weights(omega, *shape)
        if self.noise_scale is None and msg.payload.get("final"):
            # fixed for the whole run once the first trained global model is known
            self.noise_scale = self.config.noise_factor * self.global_model.y_range_

    def train(self, round_idx):
        cfg = self.config
        tc = TrainConfig(epochs=cfg.epochs, learning_rate=cfg.learning_rate,
                         seed=_stream_int(cfg.seed, "training", self.cid, round_idx + 1),
                         train_centers=cfg.train_centers, ridge=cfg.ridge,
                         refit_centers=cfg.refit_centers)
        warm = self.global_model if cfg.warm_start else None
        self.model = train_rbfn(self.dataset, tc, warm_start=warm)

    def upload_weights(self, net, round_idx, audit):
        msg = net.receive(self.name, Kind.SALT)
        salt = msg.payload
        self._check_salt(salt)
        omega = self.model.get_weights()
        masked = mask_weights(self.cid, self.keyring, salt, omega)
        audit.weights.append((round_idx, self.name, encode_fixed(omega)))
        net.send(Message(Kind.MASKED_WEIGHTS, self.name, SERVER, masked,
                         round_idx, -1, array_bytes(masked)))

    # acquisition phase
    def on_candidates(self, net, audit):
        msg = net.receive(self.name, Kind.CANDIDATES)
        X, salt, agg = msg.payload["X"], msg.payload["salt"], msg.payload["aggregator"]
        self._check_salt(salt)
        pred = self.model.predict(X)
        if agg == self.cid:
            self._candidates = (X, salt, pred)
            return
        if self.config.masked:
            mask = compute_mask(self.cid, self.keyring, salt, pred.shape,
                                self.noise_scale, n_clients=self.config.K)
            values = pred + mask
        else:
            values = pred
        audit.predictions.append((msg.round, msg.iteration, self.name, pred))
        if self.config.masked:
            for m in range(pred.shape[1]):
                audit.rho.append(rank_correlation(pred[:, m], values[:, m]))
        payload = MaskedObjectiveMatrix(values, salt, self.cid)
        net.send(Message(Kind.MASKED_PREDICTIONS, self.name, SERVER, payload,
                         msg.round, msg.iteration, array_bytes(values)))

    def send_own_prediction(self, net):
        """Plaintext mode: the aggregator also sends its prediction to the server."""
        X, salt, pred = self._candidates
        net.send(Message(Kind.MASKED_PREDICTIONS, self.name, SERVER,
                         MaskedObjectiveMatrix(pred, salt, self.cid),
                         salt.round, salt.iteration, array_bytes(pred)))

    def aggregate(self, net):
        """Aggregator: unmask the sum, score candidates, return F^a."""
        msg = net.receive(self.name, Kind.FORWARD_BUNDLE)
        others = msg.payload["masked"]
        server_pred = msg.payload["server_prediction"]
        X, salt, own = self._candidates
        if [m.sender for m in others] != sorted(m.sender for m in others) or \
                len(others) != self.config.K - 1 or self.cid in [m.sender for m in others]:
            raise ProtocolError(f"{self.name}: malformed forward bundle")
        own_mask = compute_mask(self.cid, self.keyring, salt, own.shape,
                                self.noise_scale, n_clients=self.config.K)
        total = unmask_aggregate(others, own, own_mask, salt=salt)
        out = federated_lcb([m.values for m in others] + [own], server_pred,
                            t=self.config.t, client_sum=total,
                            normalize=self.config.normalize)
        self._flcb = out.flcb
        net.send(Message(Kind.FLCB_VALUES, self.name, SERVER, out.flcb,
                         msg.round, msg.iteration, array_bytes(out.flcb)))

    def receive_flcb(self, net):
        """Plaintext mode: the server's final candidate scores."""
        msg = net.receive(self.name, Kind.FLCB_VALUES)
        X = msg.payload["X"]
        self._candidates = (X, None, None)
        self._flcb = msg.payload["flcb"]

    def select_and_evaluate(self, net, round_idx, audit):
        X = self._candidates[0]
        rng = stream(self.config.seed, "kmeans", round_idx)
        Xq = select_query_points(X, self._flcb, self.config.mu,
                                 existing_archive=self.dataset.inputs, seed=rng,
                                 bounds=self.problem.bounds)
        audit.queries.append((round_idx, self.name, Xq))
        Yq = self.problem.evaluate(Xq)
        self.dataset.append(Xq, Yq)
        net.send(Message(Kind.QUERY_RESULT, self.name, SERVER, {"count": len(Xq)},
                         round_idx, -1, array_bytes(extra=8)))
        self._candidates = None
        self._flcb = None
        return Xq


class Server:
    def __init__(self, problem, params, config):
        self.problem = problem
        self.params = params
        self.config = config
        self.name = SERVER
        self.global_model = None
        self._salts = set()
        self._salt_rng = stream(config.seed, "salts")
        self._agg_rng = stream(config.seed, "aggregator")
        self.population = None

    def new_salt(self, round_idx, iteration, domain):
        key = (domain, round_idx, iteration)
        if key in self._salts:
            raise ProtocolError(f"salt for {key} already issued")
        self._salts.add(key)
        return Salt(round_idx, iteration, self._salt_rng.bytes(16), domain)

    def relay_public_keys(self, net):
        K = self.config.K
        for _ in range(K * (K - 1)):
            msg = net.receive(SERVER, Kind.PUBLIC_KEY)
            net.send(Message(Kind.PUBLIC_KEY, SERVER, client_name(msg.payload["to"]),
                             msg.payload, -1, -1, HEADER_BYTES + self.params.element_bytes))

    def broadcast_global(self, net, round_idx, final=True):
        omega = self.global_model.get_weights()
        payload = {"weights": omega, "shape": self.global_model.weight_shape, "final": final}
        for i in range(self.config.K):
            net.send(Message(Kind.GLOBAL_WEIGHTS, SERVER, client_name(i), payload,
                             round_idx, -1, array_bytes(omega)))

    def request_weights(self, net, round_idx):
        salt = self.new_salt(round_idx, -1, "weights")
        for i in range(self.config.K):
            net.send(Message(Kind.SALT, SERVER, client_name(i), salt,
                             round_idx, -1, array_bytes(extra=salt_bytes(salt))))

    def aggregate_weights(self, net):
        K = self.config.K
        masked = [net.receive(SERVER, Kind.MASKED_WEIGHTS) for _ in range(K)]
        masked.sort(key=lambda m: m.sender)
        total = aggregate_masked_weights([m.payload for m in masked])
        shape = self.global_model.weight_shape
        self.global_model = RBFNRegressor.from_weights(total / K, *shape)

    def choose_aggregator(self):
        return int(self._agg_rng.integers(self.config.K))


# -- audit record and information-flow predicates ------------------------------

@dataclass
class Audit:
    """Plaintext ground truth kept outside the parties' views."""

    predictions: list = field(default_factory=list)
    weights: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    rho: list = field(default_factory=list)
    aggregators: dict = field(default_factory=dict)

    def clear(self):
        self.predictions.clear()
        self.weights.clear()
        self.queries.clear()


def _arrays_in(payload):
    if isinstance(payload, np.ndarray):
        yield payload
    elif isinstance(payload, MaskedObjectiveMatrix):
        yield payload.values
    elif isinstance(payload, dict):
        for v in payload.values():
            yield from _arrays_in(v)
    elif isinstance(payload, (list, tuple)):
        for v in payload:
            yield from _arrays_in(v)


def _shares_values(arr, secret):
    arr = np.asarray(arr)
    return arr.shape == secret.shape and bool(np.any(arr == secret))


def _shares_rows(arr, rows):
    arr = np.asarray(arr)
    if arr.ndim != 2 or arr.shape[1] != rows.shape[1]:
        return False
    return any(np.any(np.all(arr == r, axis=1)) for r in rows)


def flow_violations(messages, audit, round_idx):
    """Count violations of the three information-flow predicates in one round.

    server_plaintext: a value the server received equals a plaintext client
        prediction or weight encoding at the same position.
    peer_predictions: a non-aggregator client received prediction data.
    query_leak: a party other than the aggregator received any query row
        outside the public candidate broadcast.
    """
    c_r = audit.aggregators.get(round_idx)
    out = {"server_plaintext": 0, "peer_predictions": 0, "query_leak": 0}
    secrets_ = [p for *_, p in audit.predictions] + [w for *_, w in audit.weights]
    for msg in messages:
        arrays = list(_arrays_in(msg.payload))
        if msg.receiver == SERVER:
            if any(_shares_values(a, s) for a in arrays for s in secrets_):
                out["server_plaintext"] += 1
        elif msg.kind in (Kind.MASKED_PREDICTIONS, Kind.FORWARD_BUNDLE) and msg.receiver != client_name(c_r):
            out["peer_predictions"] += 1
        if msg.receiver != client_name(c_r) and msg.kind != Kind.CANDIDATES:
            for _, owner, Xq in audit.queries:
                if any(_shares_rows(a, Xq) for a in arrays):
                    out["query_leak"] += 1
                    break
    return out


# -- query selection ------------------------------------------------------------

def select_query_points(X, F, mu, existing_archive=None, seed=None, bounds=None):
    """Pick ``mu`` points from candidates ``X`` scored by ``F``.

    Nondominated filtering on F (later fronts fill in if fewer than ``mu``),
    k-means in F-space from ``mu`` random distinct rows, then the member
    nearest each centroid. Archive duplicates and repeats fall through to
    the next-nearest member of the same cluster.
    """
    X = np.asarray(X, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValueError("empty population")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    archive = (np.empty((0, X.shape[1])) if existing_archive is None
               else np.asarray(existing_archive, dtype=np.float64))

    pool = []
    for front in nondominated_fronts(F):
        pool.extend(front.tolist())
        if len(pool) >= mu:
            break
    pool = np.asarray(pool)
    k = min(mu, pool.size)
    init = random_init(F[pool], k, rng)
    centers, labels = lloyd(F[pool], init, max_iter=100)

    chosen = []

    def usable(idx):
        x = X[idx]
        if archive.size and np.any(np.all(archive == x, axis=1)):
            return False
        return not any(np.array_equal(X[c], x) for c in chosen)

    for j in range(k):
        members = pool[labels == j]
        if members.size == 0:
            members = pool
        d = ((F[members] - centers[j]) ** 2).sum(axis=1)
        for idx in members[np.argsort(d, kind="stable")]:
            if usable(idx):
                chosen.append(int(idx))
                break
        else:
            d_all = ((F - centers[j]) ** 2).sum(axis=1)
            for idx in np.argsort(d_all, kind="stable"):
                if usable(idx):
                    chosen.append(int(idx))
                    break
    Xq = X[chosen]
    if Xq.shape[0] < mu:
        if bounds is None:
            raise ValueError("not enough distinct candidates and no bounds for random fill")
        lower, upper = bounds
        fill = lower + rng.random((mu - Xq.shape[0], X.shape[1])) * (upper - lower)
        Xq = np.vstack([Xq, fill])
    return Xq


# -- run log ----------------------------------------------------------------------

@dataclass
class RoundRecord:
    round: int
    aggregator: int
    evaluations: int
    igd: float
    bytes_by_kind: dict
    rho_mean_abs: float | None
    violations: dict


@dataclass
class RunLog:
    config: dict
    metadata: dict
    initial_igd: float
    initial_evaluations: int
    rounds: list = field(default_factory=list)
    trace: list = field(default_factory=list)
    rho_samples: list = field(default_factory=list)
    archive_X: np.ndarray | None = None
    archive_F: np.ndarray | None = None
    selections: list = field(default_factory=list, repr=False)
    queries: list = field(default_factory=list, repr=False)

    @property
    def final_igd(self):
        return self.rounds[-1].igd if self.rounds else self.initial_igd

    @property
    def evaluations(self):
        return self.rounds[-1].evaluations if self.rounds else self.initial_evaluations

    @property
    def violations(self):
        total = {"server_plaintext": 0, "peer_predictions": 0, "query_leak": 0}
        for r in self.rounds:
            for k, v in r.violations.items():
                total[k] += v
        return total

    def round_rows(self, run=0):
        rows = [{"run": run, "round": -1, "evals": self.initial_evaluations,
                 "igd": self.initial_igd, "rho_mean": "", "bytes_total":
                 sum(t.byte_size for t in self.trace if t.round < 0)}]
        for r in self.rounds:
            rows.append({"run": run, "round": r.round, "evals": r.evaluations,
                         "igd": r.igd,
                         "rho_mean": "" if r.rho_mean_abs is None else r.rho_mean_abs,
                         "bytes_total": sum(r.bytes_by_kind.values())})
        return rows

    def to_json(self):
        doc = {
            "config": self.config,
            "metadata": self.metadata,
            "initial_igd": self.initial_igd,
            "initial_evaluations": self.initial_evaluations,
            "rounds": [asdict(r) for r in self.rounds],
            "trace": [asdict(t) for t in self.trace],
            "rho_samples": self.rho_samples,
            "archive_X": None if self.archive_X is None else self.archive_X.tolist(),
            "archive_F": None if self.archive_F is None else self.archive_F.tolist(),
        }
        return json.dumps(doc, sort_keys=True)


# -- simulator ----------------------------------------------------------------------

@dataclass
class Federation:
    config: ExperimentConfig
    problem: object
    server: Server
    clients: list
    net: LoopbackTransport
    audit: Audit
    reference: np.ndarray
    trace: list = field(default_factory=list)
    selections: list = field(default_factory=list)
    last_query: np.ndarray | None = None

    def archive(self):
        X = np.vstack([c.dataset.inputs for c in self.clients])
        F = np.vstack([c.dataset.targets for c in self.clients])
        return X, F

    def current_igd(self):
        _, F = self.archive()
        return igd(F[nondominated_mask(F)], self.reference)

    def evaluations(self):
        return sum(len(c.dataset) for c in self.clients)


def _aggregate_round(fed, round_idx):
    server, net = fed.server, fed.net
    server.request_weights(net, round_idx)
    for c in fed.clients:
        c.upload_weights(net, round_idx, fed.audit)
    server.aggregate_weights(net)
    server.broadcast_global(net, round_idx)
    for c in fed.clients:
        c.receive_global(net)


def setup(config):
    """Initial designs, key agreement, first training and global model."""
    problem = make_problem(config.problem, config.M, config.D)
    params = gen_group_params(config.group)
    K = config.K
    net = LoopbackTransport([SERVER] + [client_name(i) for i in range(K)])
    clients = []
    for i in range(K):
        X = latin_hypercube(config.g0, problem.bounds, _stream_int(config.seed, "design", i))
        clients.append(Client(i, problem, Dataset(X, problem.evaluate(X), owner=i),
                              params, config))
    server = Server(problem, params, config)

    for c in clients:
        c.send_public_keys(net)
    server.relay_public_keys(net)
    for c in clients:
        c.receive_public_keys(net)

    lower, upper = problem.bounds
    server.global_model = initial_model(
        lower, upper, config.M, _stream_int(config.seed, "init"),
        n_centers=default_n_centers(config.D, config.M))
    server.broadcast_global(net, -1, final=False)
    for c in clients:
        c.receive_global(net)
        c.train(-1)
    fed = Federation(config, problem, server, clients, net, Audit(),
                     sample_pareto_front(problem, 10 * config.N_p))
    _aggregate_round(fed, -1)
    violations = flow_violations(net.log, fed.audit, -1)
    if config.masked and violations["server_plaintext"]:
        raise ProtocolError("plaintext weights reached the server during setup")
    fed.trace.extend(m.record() for m in net.drain())
    fed.audit.clear()
    return fed


def _acquisition(fed, round_idx, c_r):
    """t_m iterations of offspring generation, scoring and selection."""
    cfg, server, net = fed.config, fed.server, fed.net
    lower, upper = fed.problem.bounds
    var_rng = stream(cfg.seed, "variation", round_idx)
    refvecs = simplex_lattice_refvecs(cfg.M, default_layers(cfg.M))
    if cfg.reinit_population or server.population is None:
        server.population = lower + var_rng.random((cfg.N_p, cfg.D)) * (upper - lower)
    interval = adaptation_interval(cfg.t_m)
    aggregator = fed.clients[c_r]
    selections = []
    for j in range(cfg.t_m):
        offspring = generate_offspring(server.population, (lower, upper), var_rng,
                                       n_offspring=cfg.N_p)
        X = unique_rows(np.vstack([server.population, offspring]))
        salt = server.new_salt(round_idx, j, "pred")
        for i in range(cfg.K):
            net.send(Message(Kind.CANDIDATES, SERVER, client_name(i),
                             {"X": X, "salt": salt, "aggregator": c_r}, round_idx, j,
                             array_bytes(X, extra=salt_bytes(salt) + 8)))
        server_pred = server.global_model.predict(X)
        for c in fed.clients:
            c.on_candidates(net, fed.audit)

        if cfg.masked:
            masked = sorted((net.receive(SERVER, Kind.MASKED_PREDICTIONS)
                             for _ in range(cfg.K - 1)), key=lambda m: m.payload.sender)
            bundle = {"masked": [m.payload for m in masked], "server_prediction": server_pred}
            net.send(Message(Kind.FORWARD_BUNDLE, SERVER, aggregator.name, bundle,
                             round_idx, j,
                             array_bytes(server_pred, *[m.payload.values for m in masked])))
            aggregator.aggregate(net)
            F = net.receive(SERVER, Kind.FLCB_VALUES).payload
        else:
            aggregator.send_own_prediction(net)
            preds = {}
            for _ in range(cfg.K):
                m = net.receive(SERVER, Kind.MASKED_PREDICTIONS).payload
                preds[m.sender] = m.values
            others = [preds[i] for i in range(cfg.K) if i != c_r]
            own = preds[c_r]
            total = None
            for p in others:
                total = p if total is None else total + p
            total = total + own + np.zeros_like(own)
            F = federated_lcb(others + [own], server_pred, t=cfg.t, client_sum=total,
                              normalize=cfg.normalize).flcb
            if j == cfg.t_m - 1:
                net.send(Message(Kind.FLCB_VALUES, SERVER, aggregator.name,
                                 {"X": X, "flcb": F}, round_idx, j, array_bytes(X, F)))
                aggregator.receive_flcb(net)

        if F.shape != (X.shape[0], cfg.M) or not np.all(np.isfinite(F)):
            raise ProtocolError("malformed acquisition values")
        sel = apd_select(F, refvecs, (j + 1) / cfg.t_m, cfg.alpha)
        selections.append(sel)
        server.population = X[sel]
        if len(sel) < 2:
            fresh = lower + var_rng.random((2 - len(sel), cfg.D)) * (upper - lower)
            server.population = np.vstack([server.population, fresh])
        if (j + 1) % interval == 0:
            Fs = F[sel]
            refvecs = adapt_refvecs(refvecs, Fs.max(axis=0) - Fs.min(axis=0))
    return selections


def run_round(fed, round_idx):
    """One surrogate-update round; returns its RoundRecord."""
    cfg, server, net = fed.config, fed.server, fed.net
    c_r = server.choose_aggregator()
    if not 0 <= c_r < cfg.K:
        raise ProtocolError(f"aggregator id {c_r} out of range")
    fed.audit.aggregators[round_idx] = c_r
    n_rho = len(fed.audit.rho)

    fed.selections.append(_acquisition(fed, round_idx, c_r))
    Xq = fed.clients[c_r].select_and_evaluate(net, round_idx, fed.audit)
    net.receive(SERVER, Kind.QUERY_RESULT)

    for c in fed.clients:
        c.train(round_idx)
    _aggregate_round(fed, round_idx)

    messages = net.drain()
    violations = (flow_violations(messages, fed.audit, round_idx) if cfg.masked
                  else {"server_plaintext": 0, "peer_predictions": 0, "query_leak": 0})
    bytes_by_kind = {}
    for m in messages:
        bytes_by_kind[m.kind.value] = bytes_by_kind.get(m.kind.value, 0) + m.byte_size
    fed.trace.extend(m.record() for m in messages)
    fed.audit.clear()
    rho = fed.audit.rho[n_rho:]
    fed.last_query = Xq
    return RoundRecord(round_idx, c_r, fed.evaluations(), fed.current_igd(),
                       bytes_by_kind,
                       float(np.mean(np.abs(rho))) if rho else None, violations)


def run_experiment(config, keep_archive=True):
    """Setup followed by ``budget / mu`` rounds; deterministic in ``config.seed``."""
    fed = setup(config)
    log = RunLog(config=config.to_dict(),
                 metadata={"hash": HASH_NAME, "version": __version__,
                           "train_centers": config.train_centers,
                           "config_hash": config.config_hash()},
                 initial_igd=fed.current_igd(),
                 initial_evaluations=fed.evaluations())
    for r in range(config.n_rounds):
        log.rounds.append(run_round(fed, r))
        log.queries.append(fed.last_query)
    log.trace = list(fed.trace)
    log.rho_samples = [float(x) for x in fed.audit.rho]
    if keep_archive:
        log.archive_X, log.archive_F = fed.archive()
    log.selections = fed.selections
    return log
