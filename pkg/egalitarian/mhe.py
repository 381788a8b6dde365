"""
Memory-hard encryption.

A chunk of q blocks is encrypted with the help of a password-derived memory
header of M-q blocks. The header's last block X_0 gives the first key K_0; a
random K_1 encrypts the header-derived stream in ECB and the result is
chained in CBC under K_0. Every intermediate C''_i is folded back into the
memory before the next body block is derived, so K_1 (wrapped with the hash
of the final body block) is only recoverable after the whole ciphertext has
been processed once. Decryption therefore reads the ciphertext twice.

Two header modes exist: "per-chunk" derives a fresh header from (P, S) for
every chunk; "shared" derives one header from P only and binds each chunk
through K_0 = H(X_0 ‖ S).
"""

import hashlib
import logging
import secrets
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

try:
    from cryptography.hazmat.decrepit.ciphers.algorithms import Camellia
except ImportError:
    from cryptography.hazmat.primitives.ciphers.algorithms import Camellia

from .argon2m import (
    BLOCK_SIZE,
    BLOCK_WORDS,
    MAX_PASSES,
    InvalidParameterError,
    MBlock,
    MemoryArray,
    MemParams,
    compress,
    compress_raw,
    expand_digest,
    expand_first_blocks,
    fill_from_digest,
    password_digest,
    phi_index,
)

logger = logging.getLogger(__name__)

MAGIC = b"MHE1"
VERSION = 1
KEY_SIZE = 32
IV_SIZE = 16
TAG_SIZE = 32
SALT_SIZE = 16
BODY_LANE = (1 << 64) - 1
HEADER_MODES = ("per-chunk", "shared")
# largest header a container may announce: 2 GiB
MAX_HEADER_BLOCKS = 1 << 21

CIPHERS = {
    1: ("aes-256", algorithms.AES),
    2: ("camellia-256", Camellia),
}
CIPHER_IDS = {name: cid for cid, (name, _) in CIPHERS.items()}

_FLAG_SHARED = 0x01
_FLAG_HASH_BLOCKS = 0x02
_FLAG_TAG = 0x80
_LANES_SHIFT = 2
_LANES_MASK = 0x0F

_CONTAINER_HEAD = struct.Struct("<4sBBQIIBI")


class MalformedContainerError(ValueError):
    """Raised for container bytes that cannot be parsed."""


class IntegrityError(Exception):
    """Raised when a chunk's integrity tag does not match its decrypted plaintext."""


def _h(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=KEY_SIZE).digest()


@dataclass(frozen=True)
class MheParams:
    M: int
    q: int
    t: int = 1
    cipher: str = "aes-256"
    header_mode: str = "per-chunk"
    lanes: int = 1
    hash_blocks: bool = False

    def __post_init__(self):
        if not 1 <= self.q < self.M:
            raise InvalidParameterError(f"need M > q >= 1, got M={self.M}, q={self.q}")
        if self.q >= 1 << 32:
            raise InvalidParameterError(f"chunk length q={self.q} does not fit the container")
        if not 1 <= self.t <= MAX_PASSES:
            raise InvalidParameterError(f"pass count t must be in [1, {MAX_PASSES}], got {self.t}")
        if self.cipher not in CIPHER_IDS:
            raise InvalidParameterError(f"unknown cipher {self.cipher!r}, expected one of {sorted(CIPHER_IDS)}")
        if self.header_mode not in HEADER_MODES:
            raise InvalidParameterError(f"header_mode must be one of {HEADER_MODES}, got {self.header_mode!r}")
        if self.lanes & (self.lanes - 1) or not 1 <= self.lanes <= 1 << _LANES_MASK:
            raise InvalidParameterError(f"lanes must be a power of two up to {1 << _LANES_MASK}, got {self.lanes}")
        MemParams(T=self.M - self.q, p=self.lanes, t=self.t)

    @property
    def header_params(self) -> MemParams:
        return MemParams(T=self.M - self.q, p=self.lanes, t=self.t)

    @property
    def header_blocks(self) -> int:
        return self.M - self.q

    @property
    def chunk_bytes(self) -> int:
        return self.q * BLOCK_SIZE

    @property
    def cipher_id(self) -> int:
        return CIPHER_IDS[self.cipher]

    @property
    def shared(self) -> bool:
        return self.header_mode == "shared"


@dataclass(frozen=True)
class MheHeader:
    params: MheParams
    memory: MemoryArray
    x0: MBlock
    k0: bytes
    salt: bytes

    def for_salt(self, salt: bytes) -> "MheHeader":
        """Rebind a shared header to another chunk's associated data."""
        if not self.params.shared:
            raise InvalidParameterError("only shared headers can be reused across chunks")
        return MheHeader(self.params, self.memory, self.x0, _h(self.x0.to_bytes() + salt), bytes(salt))

    @property
    def iv(self) -> bytes:
        return _h(self.x0.to_bytes() + self.salt + b"iv")[:IV_SIZE]


@dataclass(frozen=True)
class SessionKeys:
    k0: bytes
    k1: bytes

    @classmethod
    def generate(cls, header: MheHeader, rng: np.random.Generator | None = None) -> "SessionKeys":
        """K_1 from the system CSPRNG; `rng` is for reproducible tests only."""
        k1 = secrets.token_bytes(KEY_SIZE) if rng is None else rng.bytes(KEY_SIZE)
        return cls(k0=header.k0, k1=k1)


@dataclass(frozen=True)
class MheChunk:
    salt: bytes
    iv: bytes
    body_ct: bytes
    key_wrap: bytes
    tag: bytes | None = None

    @property
    def block_count(self) -> int:
        return len(self.body_ct) // BLOCK_SIZE


class CiphertextReader:
    """Block-level access to a chunk's ciphertext that counts reads of every block."""

    def __init__(self, chunk: MheChunk, trace: "DecryptTrace | None" = None):
        self._body = chunk.body_ct
        self.reads = [0] * chunk.block_count
        self._trace = trace

    def read(self, i: int) -> bytes:
        self.reads[i - 1] += 1
        if self._trace is not None:
            self._trace.record("ciphertext-read", i)
        return self._body[(i - 1) * BLOCK_SIZE:i * BLOCK_SIZE]

    @property
    def passes(self) -> tuple[int, int]:
        return min(self.reads), max(self.reads)


@dataclass
class DecryptTrace:
    events: list[tuple[str, int]] = field(default_factory=list)

    def record(self, event: str, detail: int = 0) -> None:
        self.events.append((event, detail))

    def first(self, event: str) -> int:
        return next(k for k, (name, _) in enumerate(self.events) if name == event)

    def positions(self, event: str) -> list[int]:
        return [k for k, (name, _) in enumerate(self.events) if name == event]


@dataclass(frozen=True)
class DelegationReport:
    ok: bool
    header_mode: str
    reads_before_k1: int
    q: int
    header_needs_ciphertext: bool
    events: tuple[tuple[str, int], ...]


def _block_cipher(params: MheParams, key: bytes):
    return CIPHERS[params.cipher_id][1](key)


def _ecb(params: MheParams, key: bytes):
    return Cipher(_block_cipher(params, key), modes.ECB())


def _to_words(data: bytes) -> np.ndarray:
    return np.frombuffer(data, dtype="<u8").astype(np.uint64)


def _to_bytes(words: np.ndarray) -> bytes:
    return words.astype("<u8").tobytes()


def init_header(password: bytes, salt: bytes, params: MheParams, workers: int = 1) -> MheHeader:
    """Fill the M-q header blocks from (P, S); S does not enter the fill in shared mode."""
    mem = params.header_params
    fill_salt = b"" if params.shared else bytes(salt)
    h0 = password_digest(bytes(password), fill_salt, mem, extra=MAGIC + bytes([params.cipher_id]))
    memory = fill_from_digest(h0, mem, workers)
    x0 = memory.block(mem.T - 1)
    k0 = _h(x0.to_bytes() + bytes(salt)) if params.shared else _h(x0.to_bytes())
    logger.debug(f"Header of {mem.T} blocks ready ({params.header_mode})")
    return MheHeader(params=params, memory=memory, x0=x0, k0=k0, salt=bytes(salt))


class _Body:
    """The body chain laid after the header; header blocks are looked up, never written."""

    def __init__(self, lookup: Callable[[int], np.ndarray], header_blocks: int, x0: np.ndarray, q: int):
        self._lookup = lookup
        self._n = header_blocks
        self.blocks = np.zeros((q + 1, BLOCK_WORDS), dtype=np.uint64)
        self.blocks[0] = x0

    def get(self, idx: int) -> np.ndarray:
        if idx < self._n - 1:
            return self._lookup(idx)
        return self.blocks[idx - (self._n - 1)]

    def derive(self, i: int, k0: bytes) -> None:
        """X_i from the (modified) X_{i-1} and any earlier block but X_{i-1}."""
        prev = self.blocks[i - 1]
        ref = self.get(int(prev[0]) % (self._n + i - 2))
        self.blocks[i] = compress_raw(MBlock(prev), MBlock(ref), BODY_LANE, i, k0).words


def _stream_input(params: MheParams, words: np.ndarray) -> bytes:
    raw = _to_bytes(words)
    return expand_digest(raw, BLOCK_SIZE) if params.hash_blocks else raw


def _header_lookup(header: MheHeader) -> Callable[[int], np.ndarray]:
    return lambda idx: header.memory.words[idx]


def encrypt_chunk(header: MheHeader, keys: SessionKeys, plaintext: bytes, params: MheParams,
                  tag: bool = False) -> MheChunk:
    if len(plaintext) != params.chunk_bytes:
        raise InvalidParameterError(f"chunk plaintext must be {params.chunk_bytes} bytes, got {len(plaintext)}")
    if len(keys.k1) != KEY_SIZE or len(keys.k0) != KEY_SIZE:
        raise InvalidParameterError("session keys must be 32 bytes each")

    iv = header.iv
    ecb_k1 = _ecb(params, keys.k1).encryptor()
    cbc_k0 = Cipher(_block_cipher(params, keys.k0), modes.CBC(iv)).encryptor()
    body = _Body(_header_lookup(header), params.header_blocks, header.x0.words, params.q)

    out = []
    for i in range(1, params.q + 1):
        m_i = _to_words(plaintext[(i - 1) * BLOCK_SIZE:i * BLOCK_SIZE])
        c_prime = _to_words(ecb_k1.update(_stream_input(params, body.blocks[i - 1])))
        c_double = c_prime ^ m_i
        out.append(cbc_k0.update(_to_bytes(c_double)))
        body.blocks[i - 1] ^= c_double
        body.derive(i, keys.k0)
    cbc_k0.finalize()

    wrap_in = bytes(a ^ b for a, b in zip(_h(_to_bytes(body.blocks[params.q])), keys.k1))
    key_wrap = _ecb(params, keys.k0).encryptor().update(wrap_in)
    return MheChunk(
        salt=header.salt,
        iv=iv,
        body_ct=b"".join(out),
        key_wrap=key_wrap,
        tag=_h(plaintext) if tag else None,
    )


def _replay(header_lookup, header: MheHeader, chunk: MheChunk, params: MheParams,
            reader: CiphertextReader, trace: DecryptTrace | None) -> tuple[_Body, bytes]:
    """First ciphertext pass: rebuild the body without K_1, then unwrap K_1."""
    cbc = Cipher(_block_cipher(params, header.k0), modes.CBC(chunk.iv)).decryptor()
    body = _Body(header_lookup, params.header_blocks, header.x0.words, params.q)
    for i in range(1, params.q + 1):
        c_double = _to_words(cbc.update(reader.read(i)))
        body.blocks[i - 1] ^= c_double
        body.derive(i, header.k0)
    wrap_in = _ecb(params, header.k0).decryptor().update(chunk.key_wrap)
    k1 = bytes(a ^ b for a, b in zip(wrap_in, _h(_to_bytes(body.blocks[params.q]))))
    if trace is not None:
        trace.record("k1-unwrapped")
    return body, k1


def _check_chunk(chunk: MheChunk, params: MheParams) -> None:
    if len(chunk.body_ct) != params.chunk_bytes:
        raise InvalidParameterError(f"chunk ciphertext must be {params.chunk_bytes} bytes, got {len(chunk.body_ct)}")
    if len(chunk.key_wrap) != KEY_SIZE or len(chunk.iv) != IV_SIZE:
        raise InvalidParameterError("malformed key wrap or IV length")


def decrypt_chunk(header: MheHeader, chunk: MheChunk, params: MheParams,
                  reader: CiphertextReader | None = None, trace: DecryptTrace | None = None) -> bytes:
    """Two passes over the ciphertext: replay and unwrap K_1, then strip the K_1 stream."""
    _check_chunk(chunk, params)
    if trace is not None:
        trace.record("header-ready")
    reader = reader or CiphertextReader(chunk, trace)
    body, k1 = _replay(_header_lookup(header), header, chunk, params, reader, trace)

    ecb_k1 = _ecb(params, k1).encryptor()
    cbc = Cipher(_block_cipher(params, header.k0), modes.CBC(chunk.iv)).decryptor()
    out = []
    for i in range(1, params.q + 1):
        c_double = _to_words(cbc.update(reader.read(i)))
        pre = body.blocks[i - 1] ^ c_double
        out.append(_to_bytes(c_double ^ _to_words(ecb_k1.update(_stream_input(params, pre)))))
        if trace is not None:
            trace.record("plaintext-block", i)
    return b"".join(out)


def body_blocks(header: MheHeader, chunk: MheChunk, params: MheParams) -> list[MBlock]:
    """X_1..X_q as generated, before each one is modified by the next C''."""
    _check_chunk(chunk, params)
    reader = CiphertextReader(chunk)
    body, _ = _replay(_header_lookup(header), header, chunk, params, reader, None)
    cbc = Cipher(_block_cipher(params, header.k0), modes.CBC(chunk.iv)).decryptor()
    c_doubles = [_to_words(cbc.update(reader.read(i))) for i in range(1, params.q + 1)]
    pre = [body.blocks[i] ^ c_doubles[i] for i in range(1, params.q)]
    return [MBlock(w) for w in pre] + [MBlock(body.blocks[params.q])]


def delegation_resistance_audit(params: MheParams, password: bytes = b"audit",
                                seed: int = 0) -> DelegationReport:
    """
    Decrypt an instrumented chunk and check the data-dependency order.

    K_1 must become available only after every ciphertext block has been
    read, and no plaintext may be produced before K_1.
    """
    rng = np.random.default_rng(seed)
    salt = rng.bytes(SALT_SIZE)
    header = init_header(password, salt, params)
    chunk = encrypt_chunk(header, SessionKeys.generate(header, rng), rng.bytes(params.chunk_bytes), params)

    trace = DecryptTrace()
    decrypt_chunk(header, chunk, params, trace=trace)

    k1_at = trace.first("k1-unwrapped")
    reads = trace.positions("ciphertext-read")
    reads_before = sum(1 for k in reads if k < k1_at)
    blocks_before = {trace.events[k][1] for k in reads if k < k1_at}
    plaintext_at = trace.positions("plaintext-block")
    ok = (
        blocks_before == set(range(1, params.q + 1))
        and all(k > k1_at for k in plaintext_at)
        and trace.first("header-ready") < reads[0]
    )
    logger.info(f"Delegation audit ({params.header_mode}): {reads_before} ciphertext reads before K_1, ok={ok}")
    return DelegationReport(
        ok=ok,
        header_mode=params.header_mode,
        reads_before_k1=reads_before,
        q=params.q,
        header_needs_ciphertext=False,
        events=tuple(trace.events),
    )


@dataclass(frozen=True)
class MemorySavingReport:
    alpha: float
    stored: int
    misses: int
    compress_calls: int
    plaintext: bytes

    @property
    def calls_per_miss(self) -> float:
        return self.compress_calls / self.misses if self.misses else 0.0


def memory_saving_replay(header: MheHeader, chunk: MheChunk, params: MheParams, alpha: float = 0.5,
                         lookups: int = 0, seed: int = 0) -> MemorySavingReport:
    """
    Decrypt while keeping only every (1/alpha)-th header block.

    Missing header blocks are recomputed from their parents, recursively,
    with a cache scoped to one miss. `lookups` extra random header reads are
    resolved the same way to sharpen the per-miss average. Needs a
    single-lane, single-pass header.
    """
    mem = params.header_params
    if mem.p != 1 or mem.t != 1:
        raise InvalidParameterError("memory-saving replay needs a header with one lane and one pass")
    if not 0 < alpha <= 1:
        raise InvalidParameterError(f"alpha must be in (0, 1], got {alpha}")
    _check_chunk(chunk, params)

    step = max(1, round(1 / alpha))
    words = header.memory.words
    h0 = header.memory.h0
    stored = {j: words[j] for j in range(0, mem.T, step)}
    stats = {"misses": 0, "calls": 0}

    def recompute(j: int) -> np.ndarray:
        stats["misses"] += 1
        cache: dict[int, np.ndarray] = {}
        stack = [j]
        while stack:
            k = stack[-1]
            if k in stored or k in cache:
                stack.pop()
                continue
            if k < 2:
                cache[k] = expand_first_blocks(h0, 0, mem)[k].words
                stats["calls"] += 1
                stack.pop()
                continue
            prev = stored.get(k - 1, cache.get(k - 1))
            if prev is None:
                stack.append(k - 1)
                continue
            r = phi_index(MBlock(prev), k, mem)
            ref = stored.get(r, cache.get(r))
            if ref is None:
                stack.append(r)
                continue
            cache[k] = compress(MBlock(prev), MBlock(ref), k, h0, mem).words
            stats["calls"] += 1
            stack.pop()
        return stored.get(j, cache.get(j))

    def lookup(idx: int) -> np.ndarray:
        return stored[idx] if idx in stored else recompute(idx)

    rng = np.random.default_rng(seed)
    for j in rng.integers(0, mem.T, size=lookups):
        lookup(int(j))

    reader = CiphertextReader(chunk)
    body, k1 = _replay(lookup, header, chunk, params, reader, None)
    ecb_k1 = _ecb(params, k1).encryptor()
    cbc = Cipher(_block_cipher(params, header.k0), modes.CBC(chunk.iv)).decryptor()
    out = []
    for i in range(1, params.q + 1):
        c_double = _to_words(cbc.update(reader.read(i)))
        pre = body.blocks[i - 1] ^ c_double
        out.append(_to_bytes(c_double ^ _to_words(ecb_k1.update(_stream_input(params, pre)))))

    logger.info(f"Memory-saving replay at alpha={alpha}: {stats['misses']} misses, {stats['calls']} calls")
    return MemorySavingReport(
        alpha=alpha,
        stored=len(stored),
        misses=stats["misses"],
        compress_calls=stats["calls"],
        plaintext=b"".join(out),
    )


def _mode_byte(params: MheParams, tagged: bool) -> int:
    flags = (_FLAG_SHARED if params.shared else 0) | (_FLAG_HASH_BLOCKS if params.hash_blocks else 0)
    flags |= (params.lanes.bit_length() - 1) << _LANES_SHIFT
    return flags | (_FLAG_TAG if tagged else 0)


def chunk_to_bytes(chunk: MheChunk, params: MheParams) -> bytes:
    head = _CONTAINER_HEAD.pack(
        MAGIC, VERSION, _mode_byte(params, chunk.tag is not None),
        params.M, params.q, params.t, params.cipher_id, len(chunk.salt),
    )
    return b"".join((head, chunk.salt, chunk.iv, chunk.body_ct, chunk.key_wrap, chunk.tag or b""))


def parse_chunk(buf: bytes, offset: int = 0) -> tuple[MheParams, MheChunk, int]:
    """
    Parse one container starting at `offset`.

    Returns:
        (params, chunk, offset just past the container)
    """
    if len(buf) - offset < _CONTAINER_HEAD.size:
        raise MalformedContainerError("container truncated inside its header")
    magic, version, mode, M, q, t, cipher_id, salt_len = _CONTAINER_HEAD.unpack_from(buf, offset)
    if magic != MAGIC:
        raise MalformedContainerError(f"bad magic {magic!r}")
    if version != VERSION:
        raise MalformedContainerError(f"unsupported version {version}")
    if cipher_id not in CIPHERS:
        raise MalformedContainerError(f"unknown cipher id {cipher_id}")
    if not q < M <= q + MAX_HEADER_BLOCKS:
        raise MalformedContainerError(f"header of M-q={M - q} blocks is outside [1, {MAX_HEADER_BLOCKS}]")
    try:
        params = MheParams(
            M=M, q=q, t=t,
            cipher=CIPHERS[cipher_id][0],
            header_mode="shared" if mode & _FLAG_SHARED else "per-chunk",
            lanes=1 << ((mode >> _LANES_SHIFT) & _LANES_MASK),
            hash_blocks=bool(mode & _FLAG_HASH_BLOCKS),
        )
    except InvalidParameterError as e:
        raise MalformedContainerError(f"invalid container parameters: {e}") from e

    pos = offset + _CONTAINER_HEAD.size
    tag_len = TAG_SIZE if mode & _FLAG_TAG else 0
    end = pos + salt_len + IV_SIZE + params.chunk_bytes + KEY_SIZE + tag_len
    if end > len(buf):
        raise MalformedContainerError(f"container truncated: need {end - offset} bytes, have {len(buf) - offset}")

    salt = buf[pos:pos + salt_len]
    pos += salt_len
    iv = buf[pos:pos + IV_SIZE]
    pos += IV_SIZE
    body = buf[pos:pos + params.chunk_bytes]
    pos += params.chunk_bytes
    key_wrap = buf[pos:pos + KEY_SIZE]
    pos += KEY_SIZE
    tag = buf[pos:pos + tag_len] if tag_len else None
    return params, MheChunk(salt=salt, iv=iv, body_ct=body, key_wrap=key_wrap, tag=tag), end


def pad(data: bytes, chunk_bytes: int) -> bytes:
    """Zero-fill to a whole number of chunks; the last 8 bytes hold the original length."""
    total = len(data) + 8
    padded_len = -(-total // chunk_bytes) * chunk_bytes
    return data + bytes(padded_len - total) + struct.pack("<Q", len(data))


def unpad(data: bytes) -> bytes:
    if len(data) < 8:
        raise MalformedContainerError("padded plaintext shorter than its length field")
    (length,) = struct.unpack_from("<Q", data, len(data) - 8)
    if length > len(data) - 8:
        raise MalformedContainerError(f"recorded length {length} exceeds the {len(data) - 8} available bytes")
    return data[:length]


def chunk_salt(file_salt: bytes, index: int) -> bytes:
    return file_salt + struct.pack("<Q", index)


def encrypt_file(data: bytes, password: bytes, params: MheParams, tag: bool = True,
                 file_salt: bytes | None = None, seed: int | None = None, workers: int = 1) -> bytes:
    """
    Pad and encrypt `data` into a sequence of containers.

    Args:
        seed: reproducible K_1 and salt for tests; production callers leave it None
        workers: header fill threads; in shared mode, chunks are also encrypted concurrently
    """
    rng = np.random.default_rng(seed) if seed is not None else None
    if file_salt is None:
        file_salt = secrets.token_bytes(SALT_SIZE) if rng is None else rng.bytes(SALT_SIZE)
    padded = pad(bytes(data), params.chunk_bytes)
    count = len(padded) // params.chunk_bytes
    salts = [chunk_salt(file_salt, k) for k in range(count)]
    pieces = [padded[k * params.chunk_bytes:(k + 1) * params.chunk_bytes] for k in range(count)]

    shared = init_header(password, b"", params, workers) if params.shared else None
    headers = (
        (lambda k: shared.for_salt(salts[k])) if shared is not None
        else (lambda k: init_header(password, salts[k], params, workers))
    )
    keys = [
        secrets.token_bytes(KEY_SIZE) if rng is None else rng.bytes(KEY_SIZE)
        for _ in range(count)
    ]

    def one(k: int) -> bytes:
        header = headers(k)
        chunk = encrypt_chunk(header, SessionKeys(header.k0, keys[k]), pieces[k], params, tag=tag)
        logger.info(f"Chunk {k + 1}/{count} encrypted")
        return chunk_to_bytes(chunk, params)

    if shared is not None and workers > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return b"".join(executor.map(one, range(count)))
    return b"".join(one(k) for k in range(count))


def decrypt_file(blob: bytes, password: bytes, workers: int = 1) -> bytes:
    """
    Decrypt a sequence of containers and strip the padding.

    Raises:
        MalformedContainerError: unparsable container bytes
        IntegrityError: a chunk's tag does not match its plaintext
    """
    blob = bytes(blob)
    if not blob:
        raise MalformedContainerError("empty container")
    offset = 0
    shared: dict[MheParams, MheHeader] = {}
    out = []
    untagged = 0
    while offset < len(blob):
        params, chunk, offset = parse_chunk(blob, offset)
        if params.shared:
            if params not in shared:
                shared[params] = init_header(password, b"", params, workers)
            header = shared[params].for_salt(chunk.salt)
        else:
            header = init_header(password, chunk.salt, params, workers)
        plaintext = decrypt_chunk(header, chunk, params)
        if chunk.tag is None:
            untagged += 1
        elif not secrets.compare_digest(_h(plaintext), chunk.tag):
            raise IntegrityError(f"integrity failure in chunk {len(out) + 1}")
        out.append(plaintext)

    if untagged:
        logger.warning(f"{untagged} chunk(s) carry no integrity tag; a wrong password yields garbage")
    data = b"".join(out)
    try:
        return unpad(data)
    except MalformedContainerError as e:
        logger.warning(f"Padding check failed ({e}); returning the raw decrypted bytes")
        return data
