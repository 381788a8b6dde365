"""Merkle hash tree over memory blocks, hashed with the 4-round Blake2b G."""

import logging
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .argon2m import BLOCK_SIZE, MBlock, MemoryArray, InvalidParameterError
from .blake2 import blake2b_reduced, blake2b_reduced_batch

logger = logging.getLogger(__name__)

DIGEST_SIZE = 16
TREE_ROUNDS = 4
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
LEAF_BATCH = 4096


def g_hash(data: bytes) -> bytes:
    return blake2b_reduced(data, digest_size=DIGEST_SIZE, rounds=TREE_ROUNDS)


def g_hash_batch(messages: np.ndarray) -> np.ndarray:
    return blake2b_reduced_batch(messages, digest_size=DIGEST_SIZE, rounds=TREE_ROUNDS)


def _block_bytes(block) -> bytes:
    return block.to_bytes() if isinstance(block, MBlock) else bytes(block)


def leaf_hash(block) -> bytes:
    return g_hash(LEAF_PREFIX + _block_bytes(block))


def node_hash(left: bytes, right: bytes) -> bytes:
    return g_hash(NODE_PREFIX + left + right)


@dataclass(frozen=True)
class OpeningPath:
    """Sibling digests from leaf level up to (excluding) the root."""

    index: int
    siblings: tuple[bytes, ...]

    @property
    def depth(self) -> int:
        return len(self.siblings)

    @staticmethod
    def encoded_size(depth: int) -> int:
        return 8 + DIGEST_SIZE * depth

    def to_bytes(self) -> bytes:
        return struct.pack("<Q", self.index) + b"".join(self.siblings)

    @classmethod
    def from_bytes(cls, buf: bytes, depth: int) -> "OpeningPath":
        if len(buf) != cls.encoded_size(depth):
            raise ValueError(f"opening path of depth {depth} is {cls.encoded_size(depth)} bytes, got {len(buf)}")
        (index,) = struct.unpack_from("<Q", buf)
        siblings = tuple(buf[8 + DIGEST_SIZE * k:8 + DIGEST_SIZE * (k + 1)] for k in range(depth))
        return cls(index=index, siblings=siblings)


class MerkleTree:
    """Complete binary tree in heap layout: node k has children 2k+1 and 2k+2, leaf j is node T-1+j."""

    def __init__(self, nodes: np.ndarray, leaf_count: int):
        if leaf_count < 1 or leaf_count & (leaf_count - 1):
            raise InvalidParameterError(f"leaf count must be a power of two, got {leaf_count}")
        if nodes.shape != (2 * leaf_count - 1, DIGEST_SIZE):
            raise InvalidParameterError(f"expected {2 * leaf_count - 1} nodes, got shape {nodes.shape}")
        self.leaf_count = leaf_count
        self.depth = leaf_count.bit_length() - 1
        self._nodes = nodes
        self._nodes.flags.writeable = False

    @property
    def root(self) -> bytes:
        return self._nodes[0].tobytes()

    def node(self, k: int) -> bytes:
        return self._nodes[k].tobytes()

    def leaf(self, index: int) -> bytes:
        self._check_index(index)
        return self.node(self.leaf_count - 1 + index)

    def _check_index(self, index: int) -> None:
        if not 0 <= index < self.leaf_count:
            raise InvalidParameterError(f"leaf index {index} out of range [0, {self.leaf_count})")

    def open(self, index: int) -> OpeningPath:
        self._check_index(index)
        k = self.leaf_count - 1 + index
        siblings = []
        while k > 0:
            siblings.append(self.node(k + 1 if k % 2 else k - 1))
            k = (k - 1) // 2
        return OpeningPath(index=index, siblings=tuple(siblings))

    def replace_leaf(self, index: int, block) -> "MerkleTree":
        """Copy of the tree with leaf `index` set to `block`; only its root path is rehashed."""
        self._check_index(index)
        nodes = self._nodes.copy()
        k = self.leaf_count - 1 + index
        nodes[k] = np.frombuffer(leaf_hash(block), dtype=np.uint8)
        while k > 0:
            k = (k - 1) // 2
            digest = node_hash(nodes[2 * k + 1].tobytes(), nodes[2 * k + 2].tobytes())
            nodes[k] = np.frombuffer(digest, dtype=np.uint8)
        return MerkleTree(nodes, self.leaf_count)


def _leaf_digests(blocks: np.ndarray) -> np.ndarray:
    messages = np.empty((blocks.shape[0], 1 + BLOCK_SIZE), dtype=np.uint8)
    messages[:, 0] = LEAF_PREFIX[0]
    messages[:, 1:] = blocks
    return g_hash_batch(messages)


def _as_block_bytes(memory) -> np.ndarray:
    if isinstance(memory, MemoryArray):
        return memory.block_bytes()
    arr = np.asarray(memory)
    if arr.dtype == np.uint64:
        arr = arr.astype("<u8", copy=False).view(np.uint8)
    return arr.reshape(arr.shape[0], BLOCK_SIZE)


def build_tree(memory, workers: int = 1) -> MerkleTree:
    """
    Hash all T blocks and every internal level.

    Args:
        memory: a MemoryArray, or an array of T blocks (uint64 words or raw bytes)
        workers: threads used for leaf hashing
    """
    blocks = _as_block_bytes(memory)
    T = blocks.shape[0]
    if T < 1 or T & (T - 1):
        raise InvalidParameterError(f"Merkle tree needs a power-of-two leaf count, got {T}")

    nodes = np.empty((2 * T - 1, DIGEST_SIZE), dtype=np.uint8)
    starts = range(0, T, LEAF_BATCH)

    def hash_range(start: int) -> None:
        stop = min(start + LEAF_BATCH, T)
        nodes[T - 1 + start:T - 1 + stop] = _leaf_digests(blocks[start:stop])

    if workers > 1 and T > LEAF_BATCH:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            list(executor.map(hash_range, starts))
    else:
        for start in starts:
            hash_range(start)

    width = T // 2
    while width >= 1:
        first = width - 1
        children = nodes[2 * first + 1:2 * first + 1 + 2 * width].reshape(width, 2 * DIGEST_SIZE)
        messages = np.empty((width, 1 + 2 * DIGEST_SIZE), dtype=np.uint8)
        messages[:, 0] = NODE_PREFIX[0]
        messages[:, 1:] = children
        nodes[first:first + width] = g_hash_batch(messages)
        width //= 2

    tree = MerkleTree(nodes, T)
    logger.info(f"Merkle tree built over {T} leaves, root {tree.root.hex()}")
    return tree


def verify_opening(root: bytes, index: int, block, path: OpeningPath, depth: int | None = None) -> bool:
    """Fold the path from the leaf hash of `block`; the claimed index must match the path's own."""
    try:
        if path.index != index or index < 0:
            return False
        if depth is not None and path.depth != depth:
            return False
        if index >> path.depth:
            return False
        if any(len(s) != DIGEST_SIZE for s in path.siblings):
            return False
        node = leaf_hash(block)
        pos = index
        for sibling in path.siblings:
            node = node_hash(node, sibling) if pos % 2 == 0 else node_hash(sibling, node)
            pos >>= 1
        return node == bytes(root)
    except (TypeError, ValueError, AttributeError):
        return False


def shared_path_size(paths: Iterable[OpeningPath]) -> int:
    """Number of digests needed to check `paths` together when shared nodes are sent once."""
    paths: Sequence[OpeningPath] = list(paths)
    computed = set()
    siblings = set()
    for path in paths:
        for level in range(path.depth):
            computed.add((level, path.index >> level))
            siblings.add((level, (path.index >> level) ^ 1))
    return len(siblings - computed)
