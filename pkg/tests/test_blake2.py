import hashlib

import numpy as np
import pytest

from egalitarian.blake2 import blake2b_reduced, blake2b_reduced_batch


@pytest.mark.parametrize("length", [0, 1, 64, 127, 128, 129, 256, 1025])
@pytest.mark.parametrize("digest_size", [16, 32, 64])
def test_full_rounds_match_hashlib(length, digest_size):
    data = bytes(range(256)) * 5
    data = data[:length]
    expected = hashlib.blake2b(data, digest_size=digest_size).digest()
    assert blake2b_reduced(data, digest_size=digest_size, rounds=12) == expected


def test_reduced_rounds_differ_from_full():
    data = b"merkle node"
    assert blake2b_reduced(data, 16, 4) != hashlib.blake2b(data, digest_size=16).digest()
    assert blake2b_reduced(data, 16, 4) != blake2b_reduced(data, 16, 5)


@pytest.mark.parametrize("length", [33, 1025])
def test_batch_matches_scalar(length):
    rng = np.random.default_rng(7)
    messages = rng.integers(0, 256, size=(5, length), dtype=np.uint8)
    digests = blake2b_reduced_batch(messages, digest_size=16, rounds=4)
    assert digests.shape == (5, 16)
    for row, digest in zip(messages, digests):
        assert digest.tobytes() == blake2b_reduced(row.tobytes(), 16, 4)


def test_batch_full_rounds_match_hashlib():
    messages = np.frombuffer(b"a" * 300, dtype=np.uint8).reshape(3, 100)
    digests = blake2b_reduced_batch(messages, digest_size=32, rounds=12)
    assert digests[0].tobytes() == hashlib.blake2b(b"a" * 100, digest_size=32).digest()


def test_argument_checks():
    with pytest.raises(ValueError):
        blake2b_reduced(b"x", digest_size=0)
    with pytest.raises(ValueError):
        blake2b_reduced(b"x", digest_size=65)
    with pytest.raises(ValueError):
        blake2b_reduced(b"x", rounds=13)
    with pytest.raises(ValueError):
        blake2b_reduced_batch(np.zeros(16, dtype=np.uint8))
