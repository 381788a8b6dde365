"""
Merkle Tree Proof of work.

The prover fills the memory once, commits to it with a Merkle root and then
searches nonces; each nonce drives a chain of L full Blake2b-256 hashes, every
step selecting a block from the previous chain value. The verifier recomputes
each selected block from its two parents and checks three openings per step,
so it never needs the memory array.
"""

import hashlib
import logging
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

from .argon2m import (
    BLOCK_SIZE,
    InvalidParameterError,
    MBlock,
    MemoryArray,
    MemParams,
    compress,
    fill_memory,
    initial_digest,
    phi_index,
    psi_inv,
)
from .merkle import DIGEST_SIZE, MerkleTree, OpeningPath, build_tree, verify_opening

logger = logging.getLogger(__name__)

MAGIC = b"MTP2"
VERSION = 1
CHAIN_SIZE = 32
NONCE_LIMIT = 1 << 64
SEARCH_BATCH = 64

_HEADER = struct.Struct("<4sBQIBBI")
_ENTRY_HEAD = struct.Struct("<QQ")


class MalformedProofError(ValueError):
    """Raised by deserialize on bytes that are not a proof for the given parameters."""


class RejectReason(Enum):
    BAD_ENTRY_COUNT = "bad-entry-count"
    POSITION_MISMATCH = "position-mismatch"
    OPENING_INVALID = "opening-invalid"
    PHI_MISMATCH = "phi-mismatch"
    DIFFICULTY_FAILED = "difficulty-failed"
    MALFORMED_ENCODING = "malformed-encoding"


@dataclass(frozen=True)
class PowParams:
    mem: MemParams
    L: int = 70
    d: int = 0

    def __post_init__(self):
        if not 1 <= self.L <= 255:
            raise InvalidParameterError(f"L must be in [1, 255], got {self.L}")
        if not 0 <= self.d <= 64:
            raise InvalidParameterError(f"d must be in [0, 64], got {self.d}")
        if self.mem.t != 1:
            raise InvalidParameterError(
                f"proofs need a single-pass fill (t=1), got t={self.mem.t}"
            )

    @property
    def T(self) -> int:
        return self.mem.T

    @property
    def depth(self) -> int:
        return self.mem.T.bit_length() - 1

    @property
    def eligible_count(self) -> int:
        return self.mem.T - 2 * self.mem.p


@dataclass(frozen=True)
class ProofEntry:
    i: int
    phi: int
    block_prev: MBlock
    block_ref: MBlock
    path_prev: OpeningPath
    path_ref: OpeningPath
    path_cur: OpeningPath


@dataclass(frozen=True)
class Proof:
    params: PowParams
    challenge: bytes
    root: bytes
    nonce: int
    entries: tuple[ProofEntry, ...]

    def to_bytes(self) -> bytes:
        return serialize(self)

    @classmethod
    def from_bytes(cls, buf: bytes, params: PowParams) -> "Proof":
        return deserialize(buf, params)


@dataclass(frozen=True)
class VerifyResult:
    accepted: bool
    reason: RejectReason | None = None
    entry: int | None = None

    def __bool__(self) -> bool:
        return self.accepted

    def describe(self) -> str:
        if self.accepted:
            return "accept"
        where = f" at entry {self.entry}" if self.entry is not None else ""
        return f"reject: {self.reason.value}{where}"


@dataclass
class ProveOutcome:
    proof: Proof | None
    nonces_tried: int
    elapsed: float
    fill_seconds: float = 0.0
    tree_seconds: float = 0.0

    @property
    def found(self) -> bool:
        return self.proof is not None


def _h(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=CHAIN_SIZE).digest()


def chain_start(challenge: bytes, root: bytes, nonce: int) -> bytes:
    """Y_0 = H(I ‖ Φ ‖ N)."""
    return _h(bytes(challenge) + bytes(root) + struct.pack("<Q", nonce))


def chain_step(y_prev: bytes, block: bytes) -> bytes:
    return _h(y_prev + block)


def select_index(y_prev: bytes, params: PowParams) -> int:
    """
    Map a chain value onto a block produced by compression (column >= 2).

    Columns 0 and 1 come from the expansion and have no parents to check, so
    they are excluded.
    """
    mem = params.mem
    r = int.from_bytes(y_prev, "little") % params.eligible_count
    per_lane = mem.lane_length - 2
    return psi_inv(r // per_lane, 2 + r % per_lane, mem)


def difficulty_check(y_final: bytes, d: int) -> bool:
    if not 0 <= d <= 64:
        raise InvalidParameterError(f"d must be in [0, 64], got {d}")
    return int.from_bytes(y_final, "little") % (1 << d) == 0


def _walk(challenge: bytes, memory: MemoryArray, root: bytes, nonce: int, params: PowParams):
    raw = memory.block_bytes()
    y = chain_start(challenge, root, nonce)
    indices = []
    for _ in range(params.L):
        i = select_index(y, params)
        indices.append(i)
        y = chain_step(y, raw[i].tobytes())
    return indices, y


def chain_indices(challenge: bytes, memory: MemoryArray, root: bytes, nonce: int, params: PowParams) -> list[int]:
    """The L block indices a nonce selects over a committed memory."""
    return _walk(challenge, memory, root, nonce, params)[0]


def assemble_proof(challenge: bytes, memory: MemoryArray, tree: MerkleTree, nonce: int,
                   params: PowParams) -> tuple[Proof, bytes]:
    """
    Build the proof for one nonce over a committed memory, difficulty aside.

    Returns:
        (proof, Y_L)
    """
    indices, y_final = _walk(challenge, memory, tree.root, nonce, params)
    entries = []
    for i in indices:
        prev = memory.block(i - 1)
        phi = phi_index(prev, i, params.mem)
        entries.append(ProofEntry(
            i=i,
            phi=phi,
            block_prev=prev,
            block_ref=memory.block(phi),
            path_prev=tree.open(i - 1),
            path_ref=tree.open(phi),
            path_cur=tree.open(i),
        ))
    proof = Proof(params=params, challenge=bytes(challenge), root=tree.root,
                  nonce=nonce, entries=tuple(entries))
    return proof, y_final


def _scan(challenge: bytes, memory: MemoryArray, root: bytes, params: PowParams,
          start: int, stop: int) -> int | None:
    for nonce in range(start, stop):
        if difficulty_check(_walk(challenge, memory, root, nonce, params)[1], params.d):
            return nonce
    return None


def search_nonce(challenge: bytes, memory: MemoryArray, tree: MerkleTree, params: PowParams,
                 nonce_start: int = 0, nonce_limit: int = 1 << 20, workers: int = 1) -> tuple[int | None, int]:
    """
    Scan nonces in rounds of `workers` consecutive batches.

    The smallest successful nonce of the first round that has one is
    returned, so the answer does not depend on `workers`.

    Returns:
        (nonce or None, nonces counted up to and including the answer)
    """
    if not 0 <= nonce_start < NONCE_LIMIT:
        raise InvalidParameterError(f"nonce_start must fit 8 bytes, got {nonce_start}")
    end = min(nonce_start + max(0, nonce_limit), NONCE_LIMIT)
    workers = max(1, int(workers))
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        start = nonce_start
        while start < end:
            bounds = [
                (min(start + k * SEARCH_BATCH, end), min(start + (k + 1) * SEARCH_BATCH, end))
                for k in range(workers)
            ]
            if executor is None:
                hits = [_scan(challenge, memory, tree.root, params, *bounds[0])]
            else:
                futures = [executor.submit(_scan, challenge, memory, tree.root, params, a, b)
                           for a, b in bounds]
                hits = [f.result() for f in futures]
            found = [n for n in hits if n is not None]
            if found:
                nonce = min(found)
                return nonce, nonce - nonce_start + 1
            start = bounds[-1][1]
    finally:
        if executor is not None:
            executor.shutdown()
    return None, end - nonce_start


def prove(challenge: bytes, params: PowParams, nonce_start: int = 0, nonce_limit: int = 1 << 20,
          workers: int = 1) -> ProveOutcome:
    """Fill, commit, then search for a nonce whose chain ends with d zero bits."""
    began = time.perf_counter()
    memory, _ = fill_memory(challenge, params.mem, workers)
    filled = time.perf_counter()
    tree = build_tree(memory, workers)
    built = time.perf_counter()

    nonce, tried = search_nonce(challenge, memory, tree, params, nonce_start, nonce_limit, workers)
    proof = None
    if nonce is not None:
        proof, _ = assemble_proof(challenge, memory, tree, nonce, params)
        logger.info(f"Proof found at nonce {nonce} after {tried} nonces")
    else:
        logger.warning(f"No proof in nonces [{nonce_start}, {nonce_start + tried})")
    return ProveOutcome(
        proof=proof,
        nonces_tried=tried,
        elapsed=time.perf_counter() - began,
        fill_seconds=filled - began,
        tree_seconds=built - filled,
    )


def _reject(reason: RejectReason, entry: int | None = None) -> VerifyResult:
    logger.debug(f"Proof rejected: {reason.value} (entry {entry})")
    return VerifyResult(accepted=False, reason=reason, entry=entry)


def verify(proof: Proof, params: PowParams) -> VerifyResult:
    """
    Check a proof in O(L log T) space.

    Never raises on hostile input; the first failing check is reported.
    """
    try:
        if proof.params != params or len(proof.root) != DIGEST_SIZE:
            return _reject(RejectReason.MALFORMED_ENCODING)
        if len(proof.entries) != params.L:
            return _reject(RejectReason.BAD_ENTRY_COUNT)
        h0 = initial_digest(proof.challenge)
        if not 0 <= proof.nonce < NONCE_LIMIT:
            return _reject(RejectReason.MALFORMED_ENCODING)
    except (InvalidParameterError, TypeError, AttributeError):
        return _reject(RejectReason.MALFORMED_ENCODING)

    depth = params.depth
    y = chain_start(proof.challenge, proof.root, proof.nonce)
    for j, entry in enumerate(proof.entries):
        try:
            i = select_index(y, params)
            if entry.i != i:
                return _reject(RejectReason.POSITION_MISMATCH, j)
            if (entry.path_prev.index, entry.path_cur.index, entry.path_ref.index) != (i - 1, i, entry.phi):
                return _reject(RejectReason.POSITION_MISMATCH, j)
            if phi_index(entry.block_prev, i, params.mem) != entry.phi:
                return _reject(RejectReason.PHI_MISMATCH, j)
            current = compress(entry.block_prev, entry.block_ref, i, h0, params.mem)
            openings = (
                (i - 1, entry.block_prev, entry.path_prev),
                (entry.phi, entry.block_ref, entry.path_ref),
                (i, current, entry.path_cur),
            )
            if not all(verify_opening(proof.root, k, b, path, depth) for k, b, path in openings):
                return _reject(RejectReason.OPENING_INVALID, j)
        except (InvalidParameterError, TypeError, AttributeError):
            return _reject(RejectReason.MALFORMED_ENCODING, j)
        y = chain_step(y, current.to_bytes())

    if not difficulty_check(y, params.d):
        return _reject(RejectReason.DIFFICULTY_FAILED)
    return VerifyResult(accepted=True)


def proof_size(params: PowParams, challenge_len: int) -> int:
    """Exact length of the wire encoding."""
    path = OpeningPath.encoded_size(params.depth)
    entry = _ENTRY_HEAD.size + 2 * BLOCK_SIZE + 3 * path
    return _HEADER.size + challenge_len + DIGEST_SIZE + 8 + params.L * entry


def serialize(proof: Proof) -> bytes:
    params = proof.params
    parts = [
        _HEADER.pack(MAGIC, VERSION, params.T, params.mem.p, params.L, params.d, len(proof.challenge)),
        proof.challenge,
        proof.root,
        struct.pack("<Q", proof.nonce),
    ]
    for e in proof.entries:
        parts += [
            _ENTRY_HEAD.pack(e.i, e.phi),
            e.block_prev.to_bytes(),
            e.block_ref.to_bytes(),
            e.path_prev.to_bytes(),
            e.path_ref.to_bytes(),
            e.path_cur.to_bytes(),
        ]
    return b"".join(parts)


def deserialize(buf: bytes, params: PowParams) -> Proof:
    """Parse a proof; any deviation from the format for `params` raises MalformedProofError."""
    buf = bytes(buf)
    if len(buf) < _HEADER.size:
        raise MalformedProofError(f"proof truncated: {len(buf)} bytes is shorter than the header")
    magic, version, T, p, L, d, challenge_len = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise MalformedProofError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedProofError(f"unsupported version {version}")
    if (T, p, L, d) != (params.T, params.mem.p, params.L, params.d):
        raise MalformedProofError(
            f"proof parameters T={T}, p={p}, L={L}, d={d} do not match "
            f"T={params.T}, p={params.mem.p}, L={params.L}, d={params.d}"
        )
    expected = proof_size(params, challenge_len)
    if len(buf) != expected:
        raise MalformedProofError(f"proof is {len(buf)} bytes, expected {expected}")

    pos = _HEADER.size
    challenge = buf[pos:pos + challenge_len]
    pos += challenge_len
    root = buf[pos:pos + DIGEST_SIZE]
    pos += DIGEST_SIZE
    (nonce,) = struct.unpack_from("<Q", buf, pos)
    pos += 8

    path_len = OpeningPath.encoded_size(params.depth)
    entries = []
    for _ in range(L):
        i, phi = _ENTRY_HEAD.unpack_from(buf, pos)
        pos += _ENTRY_HEAD.size
        block_prev = MBlock.from_bytes(buf[pos:pos + BLOCK_SIZE])
        block_ref = MBlock.from_bytes(buf[pos + BLOCK_SIZE:pos + 2 * BLOCK_SIZE])
        pos += 2 * BLOCK_SIZE
        paths = []
        for _ in range(3):
            paths.append(OpeningPath.from_bytes(buf[pos:pos + path_len], params.depth))
            pos += path_len
        entries.append(ProofEntry(i, phi, block_prev, block_ref, *paths))

    return Proof(params=params, challenge=challenge, root=root, nonce=nonce, entries=tuple(entries))
