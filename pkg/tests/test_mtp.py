import dataclasses

import numpy as np
import pytest

from egalitarian import argon2m, mtp
from egalitarian.argon2m import BLOCK_SIZE, InvalidParameterError, MBlock, MemoryArray, MemParams, psi
from egalitarian.merkle import build_tree
from egalitarian.mtp import (
    MalformedProofError,
    PowParams,
    Proof,
    RejectReason,
    assemble_proof,
    chain_indices,
    deserialize,
    difficulty_check,
    proof_size,
    prove,
    search_nonce,
    select_index,
    serialize,
    verify,
)

from .conftest import CHALLENGE


@pytest.fixture(scope="module")
def honest(committed, pow_params):
    memory, _, tree = committed
    proof, _ = assemble_proof(CHALLENGE, memory, tree, 0, pow_params)
    return proof


def _with_entry(proof, k, **changes):
    entries = list(proof.entries)
    entries[k] = dataclasses.replace(entries[k], **changes)
    return dataclasses.replace(proof, entries=tuple(entries))


def test_pow_params_validation():
    mem = MemParams(T=64)
    for kwargs in ({"L": 0}, {"L": 256}, {"d": -1}, {"d": 65}):
        with pytest.raises(InvalidParameterError):
            PowParams(mem, **kwargs)
    with pytest.raises(InvalidParameterError):
        PowParams(MemParams(T=64, t=2))
    assert PowParams(MemParams(T=256, p=4)).eligible_count == 248


def test_select_index_skips_expansion_columns(lane_params):
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(2000):
        i = select_index(rng.bytes(32), lane_params)
        assert psi(i, lane_params.mem)[1] >= 2
        seen.add(i)
    assert len(seen) > 200


def test_difficulty_check():
    assert difficulty_check(b"\xff" * 32, 0)
    assert difficulty_check(b"\x00" + b"\xff" * 31, 8)
    assert not difficulty_check(b"\x01" + b"\x00" * 31, 1)
    with pytest.raises(InvalidParameterError):
        difficulty_check(b"\x00" * 32, 65)


def test_zero_difficulty_proves_at_first_nonce(pow_params):
    outcome = prove(CHALLENGE, pow_params)
    assert outcome.found
    assert outcome.proof.nonce == 0
    assert outcome.nonces_tried == 1
    assert verify(outcome.proof, pow_params)


def test_honest_proof_verifies(honest, committed, pow_params):
    memory, _, tree = committed
    result = verify(honest, pow_params)
    assert result.accepted
    assert result.describe() == "accept"
    assert [e.i for e in honest.entries] == chain_indices(CHALLENGE, memory, tree.root, 0, pow_params)


def test_multi_lane_proof(committed_lanes, lane_params):
    memory, _, tree = committed_lanes
    proof, _ = assemble_proof(CHALLENGE, memory, tree, 3, lane_params)
    assert verify(proof, lane_params)


def test_search_is_deterministic_across_workers(committed_lanes):
    memory, _, tree = committed_lanes
    params = PowParams(memory.params, L=8, d=5)
    single = search_nonce(CHALLENGE, memory, tree, params, workers=1)
    threaded = search_nonce(CHALLENGE, memory, tree, params, workers=3)
    assert single[0] is not None
    assert single == threaded
    proof, y = assemble_proof(CHALLENGE, memory, tree, single[0], params)
    assert difficulty_check(y, 5)
    assert verify(proof, params)


def test_search_respects_start_and_limit(committed):
    memory, _, tree = committed
    params = PowParams(memory.params, L=8, d=40)
    nonce, tried = search_nonce(CHALLENGE, memory, tree, params, nonce_start=100, nonce_limit=10)
    assert nonce is None
    assert tried == 10
    outcome = prove(CHALLENGE, params, nonce_start=7, nonce_limit=3)
    assert not outcome.found
    assert outcome.nonces_tried == 3


def test_tampered_index_is_a_position_mismatch(honest, pow_params):
    entry = honest.entries[0]
    forged = _with_entry(honest, 0, i=entry.i + 1)
    result = verify(forged, pow_params)
    assert result.reason is RejectReason.POSITION_MISMATCH
    assert result.entry == 0


def test_substituted_reference_block_is_caught(honest, pow_params):
    fake = MBlock.from_bytes(b"\x42" * BLOCK_SIZE)
    result = verify(_with_entry(honest, 2, block_ref=fake), pow_params)
    assert result.reason is RejectReason.OPENING_INVALID
    assert result.entry == 2


def test_wrong_reference_index_is_a_phi_mismatch(honest, committed, pow_params):
    _, _, tree = committed
    entry = honest.entries[1]
    other = 0 if entry.phi != 0 else 1
    forged = _with_entry(honest, 1, phi=other, path_ref=tree.open(other))
    result = verify(forged, pow_params)
    assert result.reason is RejectReason.PHI_MISMATCH
    assert result.entry == 1


def test_missing_entry(honest, pow_params):
    result = verify(dataclasses.replace(honest, entries=honest.entries[:-1]), pow_params)
    assert result.reason is RejectReason.BAD_ENTRY_COUNT


def test_failed_difficulty(committed, pow_params):
    memory, _, tree = committed
    params = PowParams(pow_params.mem, L=pow_params.L, d=6)
    for nonce in range(200):
        proof, y = assemble_proof(CHALLENGE, memory, tree, nonce, params)
        if not difficulty_check(y, params.d):
            break
    result = verify(proof, params)
    assert result.reason is RejectReason.DIFFICULTY_FAILED
    assert result.describe() == "reject: difficulty-failed"


def test_proof_for_other_params_is_rejected(honest, lane_params):
    assert verify(honest, lane_params).reason is RejectReason.MALFORMED_ENCODING


def test_verifier_never_touches_the_memory(honest, pow_params, monkeypatch):
    def forbidden(*args, **kwargs):
        raise AssertionError("verifier tried to fill or commit memory")

    for name in ("fill_memory", "fill_from_digest"):
        monkeypatch.setattr(argon2m, name, forbidden)
    monkeypatch.setattr(mtp, "fill_memory", forbidden)
    monkeypatch.setattr(mtp, "build_tree", forbidden)
    assert verify(honest, pow_params)


def test_wire_format(honest, pow_params):
    raw = serialize(honest)
    assert len(raw) == proof_size(pow_params, len(CHALLENGE))
    assert raw[:4] == b"MTP2"
    decoded = deserialize(raw, pow_params)
    assert decoded == honest
    assert Proof.from_bytes(honest.to_bytes(), pow_params) == honest


def test_production_proof_size():
    params = PowParams(MemParams(T=1 << 21, p=4), L=70, d=16)
    assert proof_size(params, 32) == 216799


@pytest.mark.parametrize("mutate", [
    lambda raw: raw[:-1],
    lambda raw: raw + b"\x00",
    lambda raw: raw[:10],
    lambda raw: b"XTP2" + raw[4:],
    lambda raw: raw[:4] + b"\x09" + raw[5:],
])
def test_malformed_encodings(honest, pow_params, mutate):
    with pytest.raises(MalformedProofError):
        deserialize(mutate(serialize(honest)), pow_params)


def test_mismatched_header_params(honest, pow_params, lane_params):
    with pytest.raises(MalformedProofError):
        deserialize(serialize(honest), lane_params)
    with pytest.raises(MalformedProofError):
        deserialize(b"MTP2", pow_params)


def test_bit_flips_never_verify(honest, pow_params):
    raw = serialize(honest)
    rng = np.random.default_rng(11)
    for position in map(int, rng.integers(0, len(raw) * 8, size=1000)):
        flipped = bytearray(raw)
        flipped[position // 8] ^= 1 << (position % 8)
        try:
            result = verify(deserialize(bytes(flipped), pow_params), pow_params)
        except MalformedProofError:
            continue
        assert not result.accepted, f"bit {position} flip accepted"


def test_blocks_reused_from_another_challenge(committed, pow_params):
    memory, _, tree = committed
    proof, _ = assemble_proof(b"another block header", memory, tree, 0, pow_params)
    result = verify(proof, pow_params)
    assert result.reason is RejectReason.OPENING_INVALID
    assert result.entry == 0


def test_first_segment_lane_duplication(committed_lanes, lane_params):
    memory, h0, _ = committed_lanes
    mem = lane_params.mem
    words = memory.words.copy()
    lanes = words.reshape(mem.p, mem.lane_length, -1)
    lanes[1, :mem.segment_length] = lanes[0, :mem.segment_length]
    forged = MemoryArray(mem, h0, words)
    tree = build_tree(forged)

    def touches_copy(i):
        return any(psi(k, mem)[0] == 1 and psi(k, mem)[1] < mem.segment_length
                   for k in (i - 1, i, argon2m.phi_index(forged.block(i - 1), i, mem)))

    nonce = next(n for n in range(500)
                 if any(map(touches_copy, chain_indices(CHALLENGE, forged, tree.root, n, lane_params))))
    proof, _ = assemble_proof(CHALLENGE, forged, tree, nonce, lane_params)
    assert verify(proof, lane_params).reason is RejectReason.OPENING_INVALID


def test_select_index_maps_zero_to_the_first_compressed_block():
    params = PowParams(MemParams(T=32, p=4), L=1)
    assert select_index(bytes(32), params) == 2
    last = (params.eligible_count - 1).to_bytes(32, "little")
    assert select_index(last, params) == params.T - 1


def test_select_index_is_uniform():
    params = PowParams(MemParams(T=32, p=4), L=1)
    rng = np.random.default_rng(5)
    per_index = 1000
    counts = np.zeros(params.T, dtype=np.int64)
    for _ in range(per_index * params.eligible_count):
        counts[select_index(rng.bytes(32), params)] += 1
    eligible = counts[[i for i in range(params.T) if psi(i, params.mem)[1] >= 2]]
    assert counts.sum() == eligible.sum()
    chi2 = float(((eligible - per_index) ** 2).sum() / per_index)
    # 23 degrees of freedom
    assert chi2 < 60


def test_difficulty_frequency():
    rng = np.random.default_rng(8)
    trials = 100_000
    hits = sum(difficulty_check(rng.bytes(32), 8) for _ in range(trials))
    assert hits == pytest.approx(trials / 256, rel=0.2)


@pytest.mark.slow
def test_desk_sized_proofs():
    params = PowParams(MemParams(T=1 << 12, p=4), L=8, d=8)
    tried = []
    for k in range(20):
        challenge = b"desk run " + bytes([k])
        outcome = prove(challenge, params, workers=4)
        assert outcome.found
        assert verify(outcome.proof, params).accepted
        tried.append(outcome.nonces_tried)
    assert 2 ** 8 / 4 <= np.mean(tried) <= 2 ** 8 * 4
