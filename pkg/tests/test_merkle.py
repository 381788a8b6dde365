import numpy as np
import pytest

from egalitarian.argon2m import BLOCK_SIZE, InvalidParameterError, MBlock
from egalitarian.blake2 import blake2b_reduced
from egalitarian.merkle import (
    DIGEST_SIZE,
    OpeningPath,
    build_tree,
    g_hash,
    leaf_hash,
    node_hash,
    shared_path_size,
    verify_opening,
)


def _blocks(count, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=(count, BLOCK_SIZE), dtype=np.uint8)


def test_hashes_are_domain_separated():
    block = bytes(BLOCK_SIZE)
    assert leaf_hash(block) == blake2b_reduced(b"\x00" + block, DIGEST_SIZE, 4)
    left, right = b"\x01" * 16, b"\x02" * 16
    assert node_hash(left, right) == blake2b_reduced(b"\x01" + left + right, DIGEST_SIZE, 4)
    assert node_hash(left, right) != node_hash(right, left)


def test_root_matches_manual_fold():
    blocks = _blocks(8)
    level = [leaf_hash(b.tobytes()) for b in blocks]
    while len(level) > 1:
        level = [node_hash(level[k], level[k + 1]) for k in range(0, len(level), 2)]
    tree = build_tree(blocks)
    assert tree.root == level[0]
    assert tree.depth == 3
    assert tree.leaf(5) == leaf_hash(blocks[5].tobytes())


def test_every_opening_verifies(committed):
    memory, _, tree = committed
    for i in range(len(memory)):
        path = tree.open(i)
        assert path.depth == tree.depth
        assert verify_opening(tree.root, i, memory.block(i), path, tree.depth)


def test_bad_openings_are_rejected(committed):
    memory, _, tree = committed
    path = tree.open(17)
    block = memory.block(17)
    assert not verify_opening(tree.root, 17, memory.block(18), path)
    assert not verify_opening(tree.root, 18, block, path)
    assert not verify_opening(tree.root, 17, block, path, depth=tree.depth + 1)

    siblings = list(path.siblings)
    siblings[3] = bytes(DIGEST_SIZE)
    assert not verify_opening(tree.root, 17, block, OpeningPath(17, tuple(siblings)))

    short = OpeningPath(17, path.siblings[:-1])
    assert not verify_opening(tree.root, 17, block, short)
    assert not verify_opening(tree.root, 17, block, OpeningPath(17, (b"x",) * tree.depth))
    assert not verify_opening(tree.root, 1 << tree.depth, block, OpeningPath(1 << tree.depth, path.siblings))


def test_replace_leaf_rehashes_the_path():
    blocks = _blocks(16, seed=3)
    tree = build_tree(blocks)
    forged = MBlock.from_bytes(b"\x11" * BLOCK_SIZE)
    changed = tree.replace_leaf(9, forged)

    blocks[9] = np.frombuffer(forged.to_bytes(), dtype=np.uint8)
    assert changed.root == build_tree(blocks).root
    assert changed.root != tree.root
    assert verify_opening(changed.root, 9, forged, changed.open(9))


def test_tree_accepts_word_arrays(committed):
    memory, _, tree = committed
    assert build_tree(np.array(memory.words)).root == tree.root


def test_tree_rejects_odd_leaf_counts():
    with pytest.raises(InvalidParameterError):
        build_tree(_blocks(12))
    tree = build_tree(_blocks(4))
    with pytest.raises(InvalidParameterError):
        tree.open(4)


def test_path_encoding():
    path = OpeningPath(5, tuple(bytes([k]) * DIGEST_SIZE for k in range(4)))
    raw = path.to_bytes()
    assert len(raw) == OpeningPath.encoded_size(4) == 8 + 4 * DIGEST_SIZE
    assert OpeningPath.from_bytes(raw, 4) == path
    with pytest.raises(ValueError):
        OpeningPath.from_bytes(raw[:-1], 4)


def test_shared_path_size(committed):
    _, _, tree = committed
    assert shared_path_size([tree.open(40)]) == tree.depth
    # siblings 0 and 1 compute each other's bottom node
    assert shared_path_size([tree.open(0), tree.open(1)]) == tree.depth - 1
    far = shared_path_size([tree.open(0), tree.open(255)])
    assert far == 2 * tree.depth - 2


@pytest.mark.slow
def test_threaded_leaf_hashing_is_deterministic():
    blocks = _blocks(8192, seed=1)
    assert build_tree(blocks, workers=4).root == build_tree(blocks, workers=1).root


def test_tree_hash_is_reduced_round_blake2b():
    assert g_hash(b"") == blake2b_reduced(b"", 16, 4)
    assert len(g_hash(b"")) == DIGEST_SIZE == 16
    assert g_hash(b"") != g_hash(b"\x00")


def _tamper(rng, tree, memory):
    i = int(rng.integers(len(memory)))
    block = bytearray(memory.block(i).to_bytes())
    siblings = list(tree.open(i).siblings)
    kind = int(rng.integers(3))
    if kind == 0:
        bit = int(rng.integers(8 * BLOCK_SIZE))
        block[bit // 8] ^= 1 << (bit % 8)
    elif kind == 1:
        level = int(rng.integers(len(siblings)))
        sibling = bytearray(siblings[level])
        bit = int(rng.integers(8 * DIGEST_SIZE))
        sibling[bit // 8] ^= 1 << (bit % 8)
        siblings[level] = bytes(sibling)
    else:
        i ^= 1 << int(rng.integers(tree.depth))
    return i, bytes(block), OpeningPath(i, tuple(siblings))


@pytest.mark.slow
def test_random_tampering_is_always_rejected(committed):
    memory, _, tree = committed
    rng = np.random.default_rng(21)
    for _ in range(10_000):
        i, block, path = _tamper(rng, tree, memory)
        assert not verify_opening(tree.root, i, block, path, tree.depth)
