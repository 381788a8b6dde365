"""
Blake2b with a configurable number of rounds.

The Merkle tree hash runs Blake2b truncated to its first 4 rounds. hashlib
only exposes the full 12-round function, so the round loop lives here, once
as a scalar routine (used by the verifier, which hashes a few dozen nodes)
and once vectorised with numpy over many equal-length messages (used to
build a whole tree level at a time). With ``rounds=12`` both are plain
Blake2b and must agree with :func:`hashlib.blake2b`.
"""

import struct

import numpy as np

BLOCK_BYTES = 128
MAX_DIGEST_BYTES = 64
MASK64 = (1 << 64) - 1

IV = (
    0x6A09E667F3BCC908, 0xBB67AE8584CAA73B,
    0x3C6EF372FE94F82B, 0xA54FF53A5F1D36F1,
    0x510E527FADE682D1, 0x9B05688C2B3E6C1F,
    0x1F83D9ABFB41BD6B, 0x5BE0CD19137E2179,
)

SIGMA = (
    (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15),
    (14, 10, 4, 8, 9, 15, 13, 6, 1, 12, 0, 2, 11, 7, 5, 3),
    (11, 8, 12, 0, 5, 2, 15, 13, 10, 14, 3, 6, 7, 1, 9, 4),
    (7, 9, 3, 1, 13, 12, 11, 14, 2, 6, 5, 10, 4, 0, 15, 8),
    (9, 0, 5, 7, 2, 4, 10, 15, 14, 1, 11, 12, 6, 8, 3, 13),
    (2, 12, 6, 10, 0, 11, 8, 3, 4, 13, 7, 5, 15, 14, 1, 9),
    (12, 5, 1, 15, 14, 13, 4, 10, 0, 7, 6, 3, 9, 2, 8, 11),
    (13, 11, 7, 14, 12, 1, 3, 9, 5, 0, 15, 4, 8, 6, 2, 10),
    (6, 15, 14, 9, 11, 3, 0, 8, 12, 2, 13, 7, 1, 4, 10, 5),
    (10, 2, 8, 4, 7, 6, 1, 5, 15, 11, 9, 14, 3, 12, 13, 0),
    (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15),
    (14, 10, 4, 8, 9, 15, 13, 6, 1, 12, 0, 2, 11, 7, 5, 3),
)

# (a, b, c, d) word positions: four columns, then four diagonals
G_INDEX_MAP = (
    (0, 4, 8, 12),
    (1, 5, 9, 13),
    (2, 6, 10, 14),
    (3, 7, 11, 15),
    (0, 5, 10, 15),
    (1, 6, 11, 12),
    (2, 7, 8, 13),
    (3, 4, 9, 14),
)


def _check_args(digest_size: int, rounds: int) -> None:
    if not 1 <= digest_size <= MAX_DIGEST_BYTES:
        raise ValueError(f"digest_size must be in [1, {MAX_DIGEST_BYTES}], got {digest_size}")
    if not 1 <= rounds <= len(SIGMA):
        raise ValueError(f"rounds must be in [1, {len(SIGMA)}], got {rounds}")


def _initial_state(digest_size: int) -> list[int]:
    return [IV[0] ^ 0x01010000 ^ digest_size] + list(IV[1:])


def _block_schedule(length: int) -> list[tuple[int, int, bool]]:
    """(offset, counter, is_last) for every compression call on a message of `length` bytes."""
    if length == 0:
        return [(0, 0, True)]
    count = (length + BLOCK_BYTES - 1) // BLOCK_BYTES
    schedule = []
    for k in range(count):
        last = k == count - 1
        counter = length if last else (k + 1) * BLOCK_BYTES
        schedule.append((k * BLOCK_BYTES, counter, last))
    return schedule


def _compress(h: list[int], block: bytes, counter: int, last: bool, rounds: int) -> None:
    m = struct.unpack("<16Q", block)
    v = h + list(IV)
    v[12] ^= counter & MASK64
    v[13] ^= counter >> 64
    if last:
        v[14] ^= MASK64

    for r in range(rounds):
        s = SIGMA[r]
        for i, (pa, pb, pc, pd) in enumerate(G_INDEX_MAP):
            a, b, c, d = v[pa], v[pb], v[pc], v[pd]
            a = (a + b + m[s[2 * i]]) & MASK64
            t = d ^ a
            d = ((t & 0xFFFFFFFF) << 32) | (t >> 32)
            c = (c + d) & MASK64
            t = b ^ c
            b = ((t & 0xFFFFFF) << 40) | (t >> 24)
            a = (a + b + m[s[2 * i + 1]]) & MASK64
            t = d ^ a
            d = ((t & 0xFFFF) << 48) | (t >> 16)
            c = (c + d) & MASK64
            t = b ^ c
            b = ((t & 0x7FFFFFFFFFFFFFFF) << 1) | (t >> 63)
            v[pa], v[pb], v[pc], v[pd] = a, b, c, d

    for i in range(8):
        h[i] ^= v[i] ^ v[i + 8]


def blake2b_reduced(data: bytes, digest_size: int = 16, rounds: int = 4) -> bytes:
    """Unkeyed Blake2b running only the first `rounds` rounds of the sigma schedule."""
    _check_args(digest_size, rounds)
    data = bytes(data)
    h = _initial_state(digest_size)
    for offset, counter, last in _block_schedule(len(data)):
        chunk = data[offset:offset + BLOCK_BYTES]
        if len(chunk) < BLOCK_BYTES:
            chunk = chunk + b"\x00" * (BLOCK_BYTES - len(chunk))
        _compress(h, chunk, counter, last, rounds)
    return struct.pack("<8Q", *h)[:digest_size]


def _rotr(x: np.ndarray, n: int) -> np.ndarray:
    return (x >> np.uint64(n)) | (x << np.uint64(64 - n))


def blake2b_reduced_batch(messages: np.ndarray, digest_size: int = 16, rounds: int = 4) -> np.ndarray:
    """
    Hash every row of a 2-D uint8 array.

    All rows share one length, so they share one block schedule and the
    round function runs once per block on whole columns of 64-bit words.

    Returns:
        np.ndarray: uint8 array of shape (n, digest_size)
    """
    _check_args(digest_size, rounds)
    messages = np.ascontiguousarray(messages, dtype=np.uint8)
    if messages.ndim != 2:
        raise ValueError(f"messages must be a 2-D uint8 array, got shape {messages.shape}")

    n, length = messages.shape
    schedule = _block_schedule(length)
    padded = np.zeros((n, len(schedule) * BLOCK_BYTES), dtype=np.uint8)
    padded[:, :length] = messages
    words = padded.view("<u8").reshape(n, len(schedule), 16)

    h = np.tile(np.array(_initial_state(digest_size), dtype=np.uint64), (n, 1))
    iv = np.array(IV, dtype=np.uint64)

    for k, (_, counter, last) in enumerate(schedule):
        m = words[:, k, :]
        v = np.concatenate([h, np.tile(iv, (n, 1))], axis=1)
        v[:, 12] ^= np.uint64(counter & MASK64)
        v[:, 13] ^= np.uint64(counter >> 64)
        if last:
            v[:, 14] ^= np.uint64(MASK64)

        for r in range(rounds):
            s = SIGMA[r]
            for i, (pa, pb, pc, pd) in enumerate(G_INDEX_MAP):
                a, b, c, d = v[:, pa], v[:, pb], v[:, pc], v[:, pd]
                a = a + b + m[:, s[2 * i]]
                d = _rotr(d ^ a, 32)
                c = c + d
                b = _rotr(b ^ c, 24)
                a = a + b + m[:, s[2 * i + 1]]
                d = _rotr(d ^ a, 16)
                c = c + d
                b = _rotr(b ^ c, 63)
                v[:, pa], v[:, pb], v[:, pc], v[:, pd] = a, b, c, d

        h ^= v[:, :8] ^ v[:, 8:]

    out = h.astype("<u8").view(np.uint8).reshape(n, 64)
    return out[:, :digest_size].copy()
