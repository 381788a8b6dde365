import hashlib
import struct

import numpy as np
import pytest

from egalitarian.argon2m import (
    BLOCK_SIZE,
    InvalidParameterError,
    MAX_CHALLENGE,
    MBlock,
    MemParams,
    compress,
    dump_block_hex,
    expand_digest,
    expand_first_blocks,
    fill_from_digest,
    fill_memory,
    initial_digest,
    password_digest,
    permute_P,
    phi_index,
    psi,
    psi_inv,
)

from .conftest import CHALLENGE


@pytest.mark.parametrize("kwargs", [
    {"T": 12},
    {"T": 4},
    {"T": 64, "p": 3},
    {"T": 16, "p": 4},
    {"T": 64, "p": 0},
    {"T": 64, "t": 0},
    {"T": 64, "t": 4},
    {"T": 64, "reference": "cubic"},
])
def test_invalid_mem_params(kwargs):
    with pytest.raises(InvalidParameterError):
        MemParams(**kwargs)


def test_geometry():
    params = MemParams(T=256, p=4)
    assert params.lane_length == 64
    assert params.segment_length == 16
    assert params.slices == 4


def test_psi_roundtrip():
    params = MemParams(T=64, p=4)
    for i in range(params.T):
        lane, column = psi(i, params)
        assert lane == i // 16
        assert psi_inv(lane, column, params) == i
    with pytest.raises(InvalidParameterError):
        psi(64, params)
    with pytest.raises(InvalidParameterError):
        psi_inv(4, 0, params)


def test_initial_digest():
    assert initial_digest(CHALLENGE) == hashlib.blake2b(bytes(32) + CHALLENGE, digest_size=32).digest()
    with pytest.raises(InvalidParameterError):
        initial_digest(b"")


def test_password_digest_frames_its_inputs():
    params = MemParams(T=64)
    assert password_digest(b"ab", b"c", params) != password_digest(b"a", b"bc", params)
    assert password_digest(b"ab", b"c", params) != password_digest(b"ab", b"c", MemParams(T=128))


def test_expand_digest_layout():
    data = b"\x07" * 40
    out = expand_digest(data)
    assert len(out) == BLOCK_SIZE
    v1 = hashlib.blake2b(struct.pack("<I", BLOCK_SIZE) + data, digest_size=64).digest()
    v2 = hashlib.blake2b(v1, digest_size=64).digest()
    assert out[:32] == v1[:32]
    assert out[32:64] == v2[:32]


def test_first_blocks_are_expanded(committed, pow_params):
    memory, h0, _ = committed
    first, second = expand_first_blocks(h0, 0, pow_params.mem)
    assert memory.block(0) == first
    assert memory.block(1) == second
    assert first != second


def test_every_block_follows_the_recurrence(committed, pow_params):
    memory, h0, _ = committed
    params = pow_params.mem
    for i in range(2, params.T):
        prev = memory.block(i - 1)
        ref = phi_index(prev, i, params)
        assert ref <= i - 2
        assert compress(prev, memory.block(ref), i, h0, params) == memory.block(i)


def test_lanes_follow_the_recurrence(committed_lanes, lane_params):
    memory, h0, _ = committed_lanes
    params = lane_params.mem
    seg = params.segment_length
    for i in range(params.T):
        lane, column = psi(i, params)
        if column < 2:
            continue
        prev = memory.block(i - 1)
        ref = phi_index(prev, i, params)
        ref_lane, ref_column = psi(ref, params)
        if ref_lane == lane:
            assert ref_column <= column - 2
        else:
            assert ref_column < (column // seg) * seg
        assert compress(prev, memory.block(ref), i, h0, params) == memory.block(i)


def test_fill_does_not_depend_on_workers(committed_lanes, lane_params):
    memory, _, _ = committed_lanes
    single, _ = fill_memory(CHALLENGE, lane_params.mem, workers=1)
    assert np.array_equal(single.words, memory.words)


def test_memory_is_read_only(committed):
    memory, _, _ = committed
    with pytest.raises(ValueError):
        memory.words[0, 0] = 1


def test_challenge_and_position_binding(committed, pow_params):
    memory, h0, _ = committed
    other, _ = fill_memory(b"another challenge", pow_params.mem)
    assert other.block(pow_params.T - 1) != memory.block(pow_params.T - 1)

    prev, ref = memory.block(9), memory.block(3)
    assert compress(prev, ref, 10, h0, pow_params.mem) != compress(prev, ref, 11, h0, pow_params.mem)


def test_compress_rejects_expansion_columns(committed, pow_params):
    memory, h0, _ = committed
    with pytest.raises(InvalidParameterError):
        compress(memory.block(0), memory.block(0), 1, h0, pow_params.mem)
    with pytest.raises(InvalidParameterError):
        phi_index(memory.block(0), 1, pow_params.mem)


def test_quadratic_reference_fill_is_consistent():
    params = MemParams(T=64, reference="quadratic")
    h0 = initial_digest(CHALLENGE)
    memory = fill_from_digest(h0, params)
    for i in range(2, params.T):
        prev = memory.block(i - 1)
        assert compress(prev, memory.block(phi_index(prev, i, params)), i, h0, params) == memory.block(i)


def test_multi_pass_fill():
    h0 = initial_digest(CHALLENGE)
    one = fill_from_digest(h0, MemParams(T=64, p=2, t=1))
    two = fill_from_digest(h0, MemParams(T=64, p=2, t=2))
    assert two.block(0) != one.block(0)
    assert not np.array_equal(one.words, two.words)
    again = fill_from_digest(h0, MemParams(T=64, p=2, t=2), workers=2)
    assert np.array_equal(two.words, again.words)


def test_inconsistent_override_propagates():
    params = MemParams(T=64)
    h0 = initial_digest(CHALLENGE)
    honest = fill_from_digest(h0, params)
    fake = MBlock.from_bytes(b"\x55" * BLOCK_SIZE)
    cheat = fill_from_digest(h0, params, inconsistent={20: fake})
    assert cheat.block(20) == fake
    assert np.array_equal(cheat.words[:20], honest.words[:20])
    prev = cheat.block(20)
    assert compress(prev, cheat.block(phi_index(prev, 21, params)), 21, h0, params) == cheat.block(21)
    with pytest.raises(InvalidParameterError):
        fill_from_digest(h0, params, inconsistent={64: fake})


def test_mblock_views():
    data = bytes(range(256)) * 4
    block = MBlock.from_bytes(data)
    assert block.to_bytes() == data
    assert block.register(1) == data[16:32]
    assert MBlock.from_registers(block.registers()) == block
    assert (block ^ block) == MBlock.zero()
    assert len({block, MBlock.from_bytes(data)}) == 1
    with pytest.raises(InvalidParameterError):
        MBlock.from_bytes(b"short")


def test_permutation():
    data = bytes(range(128))
    out = permute_P(data)
    assert len(out) == 128
    assert out != data
    assert permute_P([data[k:k + 16] for k in range(0, 128, 16)]) == out
    with pytest.raises(InvalidParameterError):
        permute_P(b"\x00" * 127)


def test_dump_block_hex(committed):
    memory, _, _ = committed
    text = dump_block_hex(memory, 5)
    assert len(text) == 2 * BLOCK_SIZE
    assert bytes.fromhex(text) == memory.block(5).to_bytes()


_MASK64 = (1 << 64) - 1


def _scalar_G(v, a, b, c, d):
    def mix(x, y):
        return (x + y + 2 * (x & 0xFFFFFFFF) * (y & 0xFFFFFFFF)) & _MASK64

    def rotr(x, n):
        return ((x >> n) | (x << (64 - n))) & _MASK64

    v[a] = mix(v[a], v[b])
    v[d] = rotr(v[d] ^ v[a], 32)
    v[c] = mix(v[c], v[d])
    v[b] = rotr(v[b] ^ v[c], 24)
    v[a] = mix(v[a], v[b])
    v[d] = rotr(v[d] ^ v[a], 16)
    v[c] = mix(v[c], v[d])
    v[b] = rotr(v[b] ^ v[c], 63)


def _scalar_P(data: bytes) -> bytes:
    v = list(struct.unpack("<16Q", data))
    for k in range(4):
        _scalar_G(v, k, k + 4, k + 8, k + 12)
    for a, b, c, d in ((0, 5, 10, 15), (1, 6, 11, 12), (2, 7, 8, 13), (3, 4, 9, 14)):
        _scalar_G(v, a, b, c, d)
    return struct.pack("<16Q", *v)


def test_permutation_matches_scalar_rounds():
    assert permute_P(bytes(128)) == bytes(128)
    rng = np.random.default_rng(11)
    for _ in range(50):
        data = rng.bytes(128)
        assert permute_P(data) == _scalar_P(data)


@pytest.mark.slow
def test_permutation_outputs_are_distinct():
    rng = np.random.default_rng(12)
    inputs = {rng.bytes(128) for _ in range(10_000)}
    assert len({permute_P(x) for x in inputs}) == len(inputs)


def test_oversized_challenge():
    assert initial_digest(bytes(MAX_CHALLENGE))
    with pytest.raises(InvalidParameterError):
        initial_digest(bytes(MAX_CHALLENGE + 1))
    with pytest.raises(InvalidParameterError):
        fill_memory(bytes(MAX_CHALLENGE + 1), MemParams(T=64))


def test_blocks_are_distinct_across_challenges():
    params = MemParams(T=64)
    seen = set()
    for k in range(100):
        memory, _ = fill_memory(k.to_bytes(4, "little"), params)
        seen.update(row.tobytes() for row in memory.block_bytes())
    assert len(seen) == 100 * params.T


@pytest.mark.slow
def test_one_challenge_bit_changes_almost_every_block():
    params = MemParams(T=1 << 10, p=4)
    flipped = bytes([CHALLENGE[0] ^ 0x01]) + CHALLENGE[1:]
    a, _ = fill_memory(CHALLENGE, params, workers=2)
    b, _ = fill_memory(flipped, params, workers=2)
    differing = np.any(a.words != b.words, axis=1).sum()
    assert differing >= 0.99 * params.T
