"""
Modified Argon2d memory filler.

Fills a T-block memory array (1 KiB blocks) in p lanes split into 4 slices.
The compression function differs from stock Argon2 in that register R_7 of
the XORed input carries the block position psi(i) and registers R_8, R_9
carry the 32-byte challenge digest H_0, so every block is bound to both its
position and the challenge.

Words are numpy uint64 and all integer serialisation is little-endian.
"""

import hashlib
import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BLOCK_SIZE = 1024
BLOCK_WORDS = BLOCK_SIZE // 8
REGISTER_SIZE = 16
SLICES = 4
DIGEST_SIZE = 32
MAX_CHALLENGE = 1 << 20
ZERO16 = bytes(16)
REFERENCE_MODES = ("uniform", "quadratic")
MAX_PASSES = 3

_LO32 = np.uint64(0xFFFFFFFF)
_TWO = np.uint64(2)

# word positions of the 8 registers fed to P in one column-wise call
_COLUMN_WORDS = np.array(
    [[2 * c + 16 * k + e for k in range(8) for e in (0, 1)] for c in range(8)],
    dtype=np.intp,
)

_ROUND_COLUMNS = (
    np.array([0, 1, 2, 3]), np.array([4, 5, 6, 7]),
    np.array([8, 9, 10, 11]), np.array([12, 13, 14, 15]),
)
_ROUND_DIAGONALS = (
    np.array([0, 1, 2, 3]), np.array([5, 6, 7, 4]),
    np.array([10, 11, 8, 9]), np.array([15, 12, 13, 14]),
)


class InvalidParameterError(ValueError):
    """Raised for out-of-range indices, malformed parameters or inputs."""


@dataclass(frozen=True)
class MemParams:
    """Memory geometry: T blocks in p lanes, t passes, 4 slices per lane."""

    T: int
    p: int = 1
    t: int = 1
    reference: str = "uniform"

    def __post_init__(self):
        if self.T < 8 or self.T & (self.T - 1):
            raise InvalidParameterError(f"T must be a power of two >= 8, got {self.T}")
        if self.p < 1 or self.T % self.p:
            raise InvalidParameterError(f"lane count p={self.p} must divide T={self.T}")
        if self.T // self.p < 8 or (self.T // self.p) % SLICES:
            raise InvalidParameterError(
                f"lane length T/p={self.T // self.p} must be >= 8 and divisible by {SLICES}"
            )
        if not 1 <= self.t <= MAX_PASSES:
            raise InvalidParameterError(f"pass count t must be in [1, {MAX_PASSES}], got {self.t}")
        if self.reference not in REFERENCE_MODES:
            raise InvalidParameterError(
                f"reference must be one of {REFERENCE_MODES}, got {self.reference!r}"
            )

    @property
    def slices(self) -> int:
        return SLICES

    @property
    def lane_length(self) -> int:
        return self.T // self.p

    @property
    def segment_length(self) -> int:
        return self.lane_length // SLICES


class MBlock:
    """A 1024-byte memory block: 128 little-endian words, or 64 registers of 16 bytes."""

    __slots__ = ("words",)

    def __init__(self, words):
        arr = np.array(words, dtype=np.uint64).reshape(-1)
        if arr.shape != (BLOCK_WORDS,):
            raise InvalidParameterError(f"a block holds {BLOCK_WORDS} words, got {arr.size}")
        arr.flags.writeable = False
        self.words = arr

    @classmethod
    def from_bytes(cls, data: bytes) -> "MBlock":
        if len(data) != BLOCK_SIZE:
            raise InvalidParameterError(f"a block is {BLOCK_SIZE} bytes, got {len(data)}")
        return cls(np.frombuffer(bytes(data), dtype="<u8"))

    @classmethod
    def from_registers(cls, registers: Sequence[bytes]) -> "MBlock":
        if len(registers) != 64 or any(len(r) != REGISTER_SIZE for r in registers):
            raise InvalidParameterError("a block is exactly 64 registers of 16 bytes")
        return cls.from_bytes(b"".join(registers))

    @classmethod
    def zero(cls) -> "MBlock":
        return cls(np.zeros(BLOCK_WORDS, dtype=np.uint64))

    def to_bytes(self) -> bytes:
        return self.words.astype("<u8").tobytes()

    def register(self, k: int) -> bytes:
        if not 0 <= k < 64:
            raise InvalidParameterError(f"register index must be in [0, 63], got {k}")
        return self.to_bytes()[REGISTER_SIZE * k:REGISTER_SIZE * (k + 1)]

    def registers(self) -> list[bytes]:
        raw = self.to_bytes()
        return [raw[REGISTER_SIZE * k:REGISTER_SIZE * (k + 1)] for k in range(64)]

    def __xor__(self, other: "MBlock") -> "MBlock":
        return MBlock(self.words ^ other.words)

    def __eq__(self, other) -> bool:
        return isinstance(other, MBlock) and bool(np.array_equal(self.words, other.words))

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    def __repr__(self) -> str:
        return f"MBlock({self.to_bytes()[:8].hex()}...)"


@dataclass(frozen=True)
class MemoryArray:
    """Filled memory. The word array is read-only once the fill returns."""

    params: MemParams
    h0: bytes
    words: np.ndarray

    def __len__(self) -> int:
        return self.params.T

    def block(self, i: int) -> MBlock:
        if not 0 <= i < self.params.T:
            raise InvalidParameterError(f"block index {i} out of range [0, {self.params.T})")
        return MBlock(self.words[i])

    def block_bytes(self) -> np.ndarray:
        """(T, 1024) uint8 view of the memory."""
        return self.words.astype("<u8", copy=False).view(np.uint8).reshape(self.params.T, BLOCK_SIZE)

    def to_bytes(self) -> bytes:
        return self.words.astype("<u8").tobytes()

    @property
    def nbytes(self) -> int:
        return self.params.T * BLOCK_SIZE


def _le32(x: int) -> bytes:
    return struct.pack("<I", x)


def initial_digest(challenge: bytes) -> bytes:
    """H_0 = Blake2b-256(P ‖ S ‖ I) with P and S all-zero 16-byte strings."""
    if not 1 <= len(challenge) <= MAX_CHALLENGE:
        raise InvalidParameterError(
            f"challenge length must be in [1, {MAX_CHALLENGE}] bytes, got {len(challenge)}"
        )
    return hashlib.blake2b(ZERO16 + ZERO16 + bytes(challenge), digest_size=DIGEST_SIZE).digest()


def password_digest(password: bytes, salt: bytes, params: MemParams, extra: bytes = b"") -> bytes:
    """Length-framed H_0 for inputs where P and S are both user data."""
    data = b"".join((
        _le32(len(password)), password,
        _le32(len(salt)), salt,
        _le32(params.T), _le32(params.p), _le32(params.t),
        extra,
    ))
    return hashlib.blake2b(data, digest_size=DIGEST_SIZE).digest()


def psi(i: int, params: MemParams) -> tuple[int, int]:
    """One-dimensional index -> (lane, column)."""
    if not 0 <= i < params.T:
        raise InvalidParameterError(f"block index {i} out of range [0, {params.T})")
    return params.p * i // params.T, i % params.lane_length


def psi_inv(lane: int, column: int, params: MemParams) -> int:
    """(lane, column) -> one-dimensional index."""
    if not 0 <= lane < params.p:
        raise InvalidParameterError(f"lane {lane} out of range [0, {params.p})")
    if not 0 <= column < params.lane_length:
        raise InvalidParameterError(f"column {column} out of range [0, {params.lane_length})")
    return lane * params.lane_length + column


def _fblamka(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    return x + y + _TWO * ((x & _LO32) * (y & _LO32))


def _rotr(x: np.ndarray, n: int) -> np.ndarray:
    return (x >> np.uint64(n)) | (x << np.uint64(64 - n))


def _half_round(v: np.ndarray, groups) -> None:
    ia, ib, ic, id_ = groups
    a, b, c, d = v[:, ia], v[:, ib], v[:, ic], v[:, id_]
    a = _fblamka(a, b)
    d = _rotr(d ^ a, 32)
    c = _fblamka(c, d)
    b = _rotr(b ^ c, 24)
    a = _fblamka(a, b)
    d = _rotr(d ^ a, 16)
    c = _fblamka(c, d)
    b = _rotr(b ^ c, 63)
    v[:, ia], v[:, ib], v[:, ic], v[:, id_] = a, b, c, d


def _permute_rows(v: np.ndarray) -> np.ndarray:
    """P on every row of an (n, 16) word array; returns a new array."""
    v = np.array(v, dtype=np.uint64)
    _half_round(v, _ROUND_COLUMNS)
    _half_round(v, _ROUND_DIAGONALS)
    return v


def permute_P(registers) -> bytes:
    """
    The enhanced Blake2b round P on 8 registers (128 bytes).

    Accepts either 128 bytes or a sequence of eight 16-byte registers.
    """
    data = b"".join(registers) if not isinstance(registers, (bytes, bytearray)) else bytes(registers)
    if len(data) != 8 * REGISTER_SIZE:
        raise InvalidParameterError(f"P takes exactly 128 bytes, got {len(data)}")
    v = np.frombuffer(data, dtype="<u8").astype(np.uint64).reshape(1, 16)
    return _permute_rows(v).astype("<u8").tobytes()


def _h0_words(h0: bytes) -> np.ndarray:
    if len(h0) != DIGEST_SIZE:
        raise InvalidParameterError(f"H_0 must be {DIGEST_SIZE} bytes, got {len(h0)}")
    return np.frombuffer(h0, dtype="<u8").astype(np.uint64)


def _compress_words(prev: np.ndarray, ref: np.ndarray, lanes, columns, h0w: np.ndarray) -> np.ndarray:
    """Batched F_{H0,i} on (n, 128) inputs; `lanes`/`columns` give psi(i) per row."""
    n = prev.shape[0]
    r = prev ^ ref
    r[:, 14] = np.asarray(lanes, dtype=np.uint64)
    r[:, 15] = np.asarray(columns, dtype=np.uint64)
    r[:, 16:20] = h0w
    r_saved = r.copy()

    q = _permute_rows(r.reshape(n * 8, 16)).reshape(n, BLOCK_WORDS)
    z = np.empty_like(q)
    cols = _permute_rows(q[:, _COLUMN_WORDS].reshape(n * 8, 16)).reshape(n, 8, 16)
    z[:, _COLUMN_WORDS] = cols
    return z ^ r_saved


def compress(prev: MBlock, ref: MBlock, i: int, h0: bytes, params: MemParams) -> MBlock:
    """F_{H0,i}(X[i-1], X[phi(i)]) for a block produced by the recurrence."""
    lane, column = psi(i, params)
    if column < 2:
        raise InvalidParameterError(
            f"block {i} is at column {column}; columns 0 and 1 come from the expansion"
        )
    out = _compress_words(
        prev.words.reshape(1, BLOCK_WORDS), ref.words.reshape(1, BLOCK_WORDS),
        [lane], [column], _h0_words(h0),
    )
    return MBlock(out[0])


def compress_raw(prev: MBlock, ref: MBlock, lane: int, column: int, digest: bytes) -> MBlock:
    """F with an explicit (lane, column) tag and any 32-byte digest; positions are not checked."""
    out = _compress_words(
        prev.words.reshape(1, BLOCK_WORDS), ref.words.reshape(1, BLOCK_WORDS),
        [lane], [column], _h0_words(digest),
    )
    return MBlock(out[0])


def expand_digest(data: bytes, out_len: int = BLOCK_SIZE) -> bytes:
    """Variable-length Blake2b expansion (H') to `out_len` bytes, out_len > 64."""
    v = hashlib.blake2b(_le32(out_len) + data, digest_size=64).digest()
    out = []
    remaining = out_len
    while remaining > 64:
        out.append(v[:32])
        remaining -= 32
        v = hashlib.blake2b(v, digest_size=64).digest()
    out.append(v[:remaining] if remaining < 64 else v)
    return b"".join(out)


def expand_first_blocks(h0: bytes, lane: int, params: MemParams) -> tuple[MBlock, MBlock]:
    """Columns 0 and 1 of a lane: H'(H_0 ‖ le32(column) ‖ le32(lane))."""
    if not 0 <= lane < params.p:
        raise InvalidParameterError(f"lane {lane} out of range [0, {params.p})")
    _h0_words(h0)
    return tuple(
        MBlock.from_bytes(expand_digest(h0 + _le32(column) + _le32(lane)))
        for column in (0, 1)
    )


def _reference_column_count(params: MemParams, pass_index: int, lane: int, column: int, ref_lane: int) -> int:
    seg = params.segment_length
    s = column // seg
    if pass_index == 0:
        return column - 1 if ref_lane == lane else s * seg
    return params.lane_length - 2 if ref_lane == lane else params.lane_length - seg


def _reference(params: MemParams, pass_index: int, lane: int, column: int, j1: int, j2: int) -> int:
    """Index chosen by phi for block (lane, column) given the two leading words of its predecessor."""
    seg = params.segment_length
    s = column // seg
    ref_lane = j2 % params.p
    if pass_index == 0 and s == 0:
        ref_lane = lane

    size = _reference_column_count(params, pass_index, lane, column, ref_lane)
    if size <= 0:
        raise RuntimeError(f"empty reference window for lane {lane}, column {column}")

    if params.reference == "quadratic":
        x = ((j1 & 0xFFFFFFFF) ** 2) >> 32
        pos = size - 1 - ((size * x) >> 32)
    else:
        pos = j1 % size

    # window positions are listed oldest first
    if pass_index == 0:
        ref_column = pos
    elif ref_lane == lane:
        ref_column = (column + 1 + pos) % params.lane_length
    else:
        ref_column = ((s + 1) * seg + pos) % params.lane_length
    return ref_lane * params.lane_length + ref_column


def phi_index(prev: MBlock, i: int, params: MemParams, pass_index: int = 0) -> int:
    """Data-dependent reference index for block i, computed from X[i-1]."""
    lane, column = psi(i, params)
    if pass_index == 0 and column < 2:
        raise InvalidParameterError(f"block {i} at column {column} has no reference in the first pass")
    if not 0 <= pass_index < params.t:
        raise InvalidParameterError(f"pass index {pass_index} out of range [0, {params.t})")
    return _reference(params, pass_index, lane, column, int(prev.words[0]), int(prev.words[1]))


def _allocate(params: MemParams) -> np.ndarray:
    try:
        return np.zeros((params.T, BLOCK_WORDS), dtype=np.uint64)
    except MemoryError as e:
        raise MemoryError(
            f"cannot allocate memory array of {params.T} blocks ({params.T * BLOCK_SIZE} bytes)"
        ) from e


def _as_words(block) -> np.ndarray:
    if isinstance(block, MBlock):
        return block.words
    if isinstance(block, (bytes, bytearray)):
        return MBlock.from_bytes(block).words
    return np.asarray(block, dtype=np.uint64).reshape(BLOCK_WORDS)


def _fill_segment(words: np.ndarray, params: MemParams, h0w: np.ndarray, lanes: Sequence[int],
                  pass_index: int, slice_index: int, overrides: Mapping[int, np.ndarray]) -> None:
    lane_len = params.lane_length
    seg = params.segment_length
    lanes = np.asarray(lanes, dtype=np.intp)
    base = lanes * lane_len
    start = slice_index * seg
    if pass_index == 0 and slice_index == 0:
        start = 2

    for column in range(start, (slice_index + 1) * seg):
        prev_idx = base + (column - 1) % lane_len
        prev = words[prev_idx]
        refs = [
            _reference(params, pass_index, int(lane), column, int(prev[k, 0]), int(prev[k, 1]))
            for k, lane in enumerate(lanes)
        ]
        new = _compress_words(prev, words[refs], lanes, np.full(len(lanes), column), h0w)
        cur_idx = base + column
        if pass_index > 0:
            new ^= words[cur_idx]
        words[cur_idx] = new
        if overrides:
            for idx in cur_idx:
                if int(idx) in overrides:
                    words[idx] = overrides[int(idx)]


def fill_from_digest(h0: bytes, params: MemParams, workers: int = 1,
                     inconsistent: Mapping[int, object] | None = None) -> MemoryArray:
    """
    Fill the memory array from H_0.

    Lanes of one slice are split into `workers` groups processed
    concurrently; each slice is a barrier. The result does not depend on
    `workers`.

    Args:
        inconsistent: optional {index: block} substituted right after the
            block is computed; later blocks are derived from the substitute.
            Only cheating-prover simulations pass this.
    """
    h0w = _h0_words(h0)
    workers = max(1, min(int(workers), params.p))
    overrides = {int(k): _as_words(v) for k, v in (inconsistent or {}).items()}
    for idx in overrides:
        if not 0 <= idx < params.T:
            raise InvalidParameterError(f"inconsistent block index {idx} out of range")

    logger.info(f"Filling {params.T} blocks ({params.T * BLOCK_SIZE} bytes), "
                f"p={params.p}, t={params.t}, workers={workers}")
    words = _allocate(params)

    for lane in range(params.p):
        for column, block in enumerate(expand_first_blocks(h0, lane, params)):
            idx = psi_inv(lane, column, params)
            words[idx] = overrides.get(idx, block.words)

    groups = [list(range(params.p))[w::workers] for w in range(workers)]
    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for pass_index in range(params.t):
            for slice_index in range(SLICES):
                if executor is None:
                    _fill_segment(words, params, h0w, groups[0], pass_index, slice_index, overrides)
                else:
                    futures = [
                        executor.submit(_fill_segment, words, params, h0w, group,
                                        pass_index, slice_index, overrides)
                        for group in groups
                    ]
                    for future in futures:
                        future.result()
            logger.debug(f"Pass {pass_index + 1}/{params.t} done")
    finally:
        if executor is not None:
            executor.shutdown()

    words.flags.writeable = False
    logger.info("Memory fill completed")
    return MemoryArray(params=params, h0=bytes(h0), words=words)


def fill_memory(challenge: bytes, params: MemParams, workers: int = 1) -> tuple[MemoryArray, bytes]:
    """Compute F(I) and keep all T blocks. Returns (memory, H_0)."""
    h0 = initial_digest(challenge)
    return fill_from_digest(h0, params, workers), h0


def dump_block_hex(memory: MemoryArray, i: int) -> str:
    return memory.block(i).to_bytes().hex()
