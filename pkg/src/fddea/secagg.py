"""Diffie-Hellman pairwise keys and cancelling PRF masks.

Every pair of clients (i, j) agrees on a key through the server. For a
public salt, both ends expand the key into the same pseudo-random stream
``S_ij``; client ``i`` adds ``+S_ij`` for peers ``j > i`` and ``-S_ij`` for
peers ``j < i``, so the masks of all clients sum to zero.

Two mask flavours exist:

* real-valued masks, uniform in ``[0, scale)``, added to predicted
  objective values (the aggregator needs the individual masked values, so
  these stay in floating point and cancel up to rounding);
* 64-bit modular masks over fixed-point encodings, used for model weights,
  which only ever need to be summed and therefore cancel exactly.
"""

from __future__ import annotations

import hashlib
import random
import secrets
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HASH_NAME = "sha256"
FIXED_POINT_BITS = 32
_U53 = 2.0 ** -53

_RFC3526_2048 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF", 16)

_RFC3526_3072 = int(
    "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
    "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
    "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
    "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
    "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
    "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
    "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
    "3995497CEA956AE515D2261898FA051015728E5A8AAAC42DAD33170D04507A33"
    "A85521ABDF1CBA64ECFB850458DBEF0A8AEA71575D060C7DB3970F85A6E1E4C7"
    "ABF5AE8CDB0933D71E8C94E04A25619DCEE3D2261AD2EE6BF12FFA06D98A0864"
    "D87602733EC86A64521F2B18177B200CBBE117577A615D6C770988C0BAD946E2"
    "08E24FA074E5AB3143DB5BFCE0FD108E4B82D120A93AD2CAFFFFFFFFFFFFFFFF", 16)

# largest safe prime below 2**64; 4 = 2**2 generates the order-q subgroup
_TEST_64 = 0xFFFFFFFFFFFFFA43


@dataclass(frozen=True)
class GroupParams:
    """Cyclic group generated by ``g`` modulo ``p``; ``q`` is the order of ``g``.

    The standard presets are safe-prime groups with ``q = (p - 1) / 2``.
    """

    p: int
    q: int
    g: int
    name: str = "custom"

    @property
    def element_bytes(self):
        return (self.p.bit_length() + 7) // 8

    def contains(self, y):
        """Membership in <g>, excluding the identity and ``p - 1``."""
        y = int(y)
        return 1 < y < self.p - 1 and pow(y, self.q, self.p) == 1

    def validate(self):
        """Raise ValueError unless this is a safe-prime group of order q."""
        from sympy import isprime

        if not isprime(self.p):
            raise ValueError("p is not prime")
        if self.p != 2 * self.q + 1 or not isprime(self.q):
            raise ValueError("p is not a safe prime 2q + 1")
        if self.g in (1, self.p - 1) or pow(self.g, self.q, self.p) != 1:
            raise ValueError("g does not generate the order-q subgroup")
        return self


GROUP_PRESETS = {
    "test-64bit": GroupParams(_TEST_64, (_TEST_64 - 1) // 2, 4, "test-64bit"),
    "rfc-2048": GroupParams(_RFC3526_2048, (_RFC3526_2048 - 1) // 2, 2, "rfc-2048"),
    "rfc-3072": GroupParams(_RFC3526_3072, (_RFC3526_3072 - 1) // 2, 2, "rfc-3072"),
    # textbook toy group; 5 generates all of Z_23^*, so q here is 22
    "demo-23": GroupParams(23, 22, 5, "demo-23"),
}


def gen_group_params(preset="test-64bit"):
    try:
        return GROUP_PRESETS[preset]
    except KeyError:
        raise ValueError(f"unknown group preset {preset!r}; "
                         f"choose from {', '.join(GROUP_PRESETS)}") from None


@dataclass(frozen=True)
class KeyPair:
    secret: int = field(repr=False)
    public: int


def keypair_from_secret(params, secret):
    secret = int(secret)
    if not 1 <= secret <= params.q - 1:
        raise ValueError("secret exponent out of range [1, q-1]")
    return KeyPair(secret, pow(params.g, secret, params.p))


def keygen(params, seed=None):
    """Key pair with secret uniform in [1, q-1]; deterministic given ``seed``."""
    if seed is None:
        secret = 1 + secrets.randbelow(params.q - 1)
    else:
        secret = random.Random(seed).randrange(1, params.q)
    return keypair_from_secret(params, secret)


def shared_element(params, my_secret, peer_public):
    if not params.contains(peer_public):
        raise ValueError("peer public key is not in the prime-order subgroup "
                         "(possible small-subgroup attack)")
    return pow(int(peer_public), int(my_secret), params.p)


def derive_shared_key(params, my_secret, peer_public):
    """SHA-256 of the shared group element, big-endian fixed width."""
    z = shared_element(params, my_secret, peer_public)
    return hashlib.new(HASH_NAME, z.to_bytes(params.element_bytes, "big")).digest()


@dataclass
class Keyring:
    """Pairwise keys held by client ``owner``, indexed by peer id."""

    owner: int
    shared: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_publics(cls, params, owner, keypair, publics):
        ring = cls(owner)
        for peer, pub in publics.items():
            if peer != owner:
                ring.shared[peer] = derive_shared_key(params, keypair.secret, pub)
        return ring

    def check_complete(self, n_clients):
        expected = set(range(n_clients)) - {self.owner}
        if set(self.shared) != expected:
            missing = sorted(expected - set(self.shared))
            raise ValueError(f"keyring of client {self.owner} is incomplete; "
                             f"missing peers {missing}")


@dataclass(frozen=True)
class Salt:
    """Public per-invocation randomness for the mask PRF."""

    round: int
    iteration: int
    nonce: bytes = field(repr=False)
    domain: str = "pred"

    def to_bytes(self):
        return (self.domain.encode() + b"|" + struct.pack(">qq", self.round, self.iteration)
                + self.nonce)


@dataclass
class MaskedObjectiveMatrix:
    values: np.ndarray
    salt: Salt
    sender: int


def _expand(key, salt, n_words):
    base = hashlib.new(HASH_NAME, key + salt.to_bytes())
    per_block = base.digest_size // 8
    chunks = []
    for counter in range(-(-n_words // per_block)):
        h = base.copy()
        h.update(counter.to_bytes(8, "big"))
        chunks.append(h.digest())
    return np.frombuffer(b"".join(chunks), dtype=">u8")[:n_words].astype(np.uint64)


def mask_stream(key, salt, count, scale=1.0):
    """``count`` pseudo-random reals in ``[0, scale)`` from H(key | salt | counter)."""
    if scale < 0:
        raise ValueError("scale must be >= 0")
    if count == 0 or scale == 0:
        return np.zeros(count)
    u = (_expand(key, salt, count) >> np.uint64(11)).astype(np.float64) * _U53
    return np.minimum(u * scale, np.nextafter(scale, 0.0))


def _peer_sign(my_id, peer):
    return 1.0 if peer > my_id else -1.0


def compute_mask(my_id, keyring, salt, shape, scale, n_clients=None):
    """Pairwise-cancelling mask for client ``my_id``.

    ``scale`` may be a scalar or a per-column vector broadcast over the
    last axis of ``shape``.
    """
    if n_clients is not None:
        keyring.check_complete(n_clients)
    shape = tuple(shape)
    scale = np.asarray(scale, dtype=np.float64)
    if np.any(scale < 0):
        raise ValueError("scale must be >= 0")
    mask = np.zeros(shape)
    if not np.any(scale > 0):
        return mask
    count = int(np.prod(shape))
    for peer in sorted(keyring.shared):
        stream = mask_stream(keyring.shared[peer], salt, count).reshape(shape) * scale
        if peer > my_id:
            mask = mask + stream
        else:
            mask = mask - stream
    return mask


def unmask_aggregate(masked_from_others, own_prediction, own_mask, salt=None):
    """Exact sum of all clients' predictions, seen from the aggregator.

    ``masked_from_others`` are MaskedObjectiveMatrix objects summed in the
    given order; all must carry the same salt (and match ``salt`` if given).
    """
    if not masked_from_others:
        raise ValueError("need the masked matrices of the other clients")
    ref = salt if salt is not None else masked_from_others[0].salt
    for m in masked_from_others:
        if m.salt != ref:
            raise ValueError(f"salt mismatch from client {m.sender}: "
                             "possible replay or misrouted message")
    own_prediction = np.asarray(own_prediction, dtype=np.float64)
    total = None
    for m in masked_from_others:
        if m.values.shape != own_prediction.shape:
            raise ValueError("masked matrix shape does not match own prediction")
        total = m.values if total is None else total + m.values
    return total + own_prediction + own_mask


# -- modular fixed-point masking for model weights --------------------------

def encode_fixed(values, frac_bits=FIXED_POINT_BITS):
    q = np.round(np.asarray(values, dtype=np.float64) * 2.0 ** frac_bits)
    if np.any(np.abs(q) >= 2.0 ** 62):
        raise OverflowError("value too large for 64-bit fixed-point encoding")
    return q.astype(np.int64).view(np.uint64)


def decode_fixed(words, frac_bits=FIXED_POINT_BITS):
    return np.asarray(words, dtype=np.uint64).view(np.int64).astype(np.float64) / 2.0 ** frac_bits


def compute_mask_u64(my_id, keyring, salt, count):
    """Modular (mod 2**64) counterpart of :func:`compute_mask`."""
    mask = np.zeros(count, dtype=np.uint64)
    for peer in sorted(keyring.shared):
        stream = _expand(keyring.shared[peer], salt, count)
        if peer > my_id:
            mask += stream
        else:
            mask -= stream
    return mask


def mask_weights(my_id, keyring, salt, weights):
    w = encode_fixed(weights)
    return w + compute_mask_u64(my_id, keyring, salt, w.size)


def aggregate_masked_weights(masked):
    """Sum of masked encodings; returns the decoded plaintext sum."""
    total = np.zeros_like(masked[0])
    for m in masked:
        total += m
    return decode_fixed(total)


# -- test vectors -----------------------------------------------------------

@dataclass
class DHVector:
    group: str
    secret_a: int
    secret_b: int
    public_a: int = 0
    public_b: int = 0
    shared: int = 0
    key: bytes = b""


def make_vector(group, secret_a, secret_b):
    params = gen_group_params(group)
    a = keypair_from_secret(params, secret_a)
    b = keypair_from_secret(params, secret_b)
    z = shared_element(params, a.secret, b.public)
    return DHVector(group, a.secret, b.secret, a.public, b.public, z,
                    derive_shared_key(params, a.secret, b.public))


def write_test_vectors(path, vectors):
    """Text format: ``name = hex`` lines, one blank line between records.

    Fields per record: group (preset name), secret_a, secret_b, public_a,
    public_b, shared (group element g^(ab)), key (hash of shared).
    """
    lines = [f"# DH test vectors, hash={HASH_NAME}", ""]
    for v in vectors:
        lines += [
            f"group = {v.group}",
            f"secret_a = {v.secret_a:x}",
            f"secret_b = {v.secret_b:x}",
            f"public_a = {v.public_a:x}",
            f"public_b = {v.public_b:x}",
            f"shared = {v.shared:x}",
            f"key = {v.key.hex()}",
            "",
        ]
    Path(path).write_text("\n".join(lines))


def read_test_vectors(path):
    vectors, current = [], {}
    for raw in Path(path).read_text().splitlines() + [""]:
        line = raw.strip()
        if line.startswith("#"):
            continue
        if not line:
            if current:
                vectors.append(DHVector(
                    group=current["group"],
                    secret_a=int(current["secret_a"], 16),
                    secret_b=int(current["secret_b"], 16),
                    public_a=int(current["public_a"], 16),
                    public_b=int(current["public_b"], 16),
                    shared=int(current["shared"], 16),
                    key=bytes.fromhex(current["key"])))
                current = {}
            continue
        name, _, value = line.partition("=")
        current[name.strip()] = value.strip()
    return vectors


def check_vector(v):
    """List of mismatching field names (empty if the vector verifies)."""
    params = gen_group_params(v.group)
    bad = []
    if pow(params.g, v.secret_a, params.p) != v.public_a:
        bad.append("public_a")
    if pow(params.g, v.secret_b, params.p) != v.public_b:
        bad.append("public_b")
    if pow(v.public_b, v.secret_a, params.p) != v.shared:
        bad.append("shared")
    if pow(v.public_a, v.secret_b, params.p) != v.shared:
        bad.append("shared(b)")
    key_a = derive_shared_key(params, v.secret_a, v.public_b)
    key_b = derive_shared_key(params, v.secret_b, v.public_a)
    if key_a != v.key or key_b != v.key:
        bad.append("key")
    return bad
