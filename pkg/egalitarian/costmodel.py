"""
Attacker economics for memory-hard proofs of work.

Closed-form costs (time-area product, cheater call counts, optimal number of
openings, time-lock parallelism, the Itsuku low-memory attack) and the
desk-scale simulations that check them against real proofs.
"""

import hashlib
import logging
import math
import struct
from dataclasses import dataclass

import numpy as np

from .argon2m import InvalidParameterError, MBlock, MemParams, compress, fill_from_digest, initial_digest, phi_index
from .config import load_tradeoff_table
from .merkle import OpeningPath, build_tree, verify_opening
from .mtp import PowParams, Proof, ProofEntry, assemble_proof, chain_indices, select_index, verify

logger = logging.getLogger(__name__)

DEFAULT_BETA = 2.0 ** -15
GRID_STEP = 0.01
_GOLDEN = (math.sqrt(5) - 1) / 2


@dataclass(frozen=True)
class TradeoffTable:
    """Penalties C(α), D(α) at α = 1/x, with the honest point x = 1 prepended."""

    inverse_alphas: tuple[float, ...]
    C: tuple[float, ...]
    D: tuple[float, ...]
    version: int = 1

    def __post_init__(self):
        if not len(self.inverse_alphas) == len(self.C) == len(self.D):
            raise InvalidParameterError("tradeoff table columns differ in length")
        if list(self.inverse_alphas) != sorted(set(self.inverse_alphas)) or self.inverse_alphas[0] != 1:
            raise InvalidParameterError("inverse alphas must be strictly increasing from 1")
        if any(b < a for a, b in zip(self.C, self.C[1:])) or any(b < a for a, b in zip(self.D, self.D[1:])):
            raise InvalidParameterError("penalties must not decrease as alpha shrinks")

    @classmethod
    def from_document(cls, document: dict) -> "TradeoffTable":
        points = sorted(document["points"], key=lambda p: p["inverse_alpha"])
        return cls(
            inverse_alphas=(1.0,) + tuple(float(p["inverse_alpha"]) for p in points),
            C=(1.0,) + tuple(float(p["C"]) for p in points),
            D=(1.0,) + tuple(float(p["D"]) for p in points),
            version=document["version"],
        )

    @classmethod
    def load(cls, path=None) -> "TradeoffTable":
        return cls.from_document(load_tradeoff_table(path))

    def rows(self) -> list[tuple[float, float, float]]:
        return [(1 / x, c, d) for x, c, d in zip(self.inverse_alphas, self.C, self.D)]


_default_table: TradeoffTable | None = None


def default_table() -> TradeoffTable:
    global _default_table
    if _default_table is None:
        _default_table = TradeoffTable.load()
    return _default_table


def _interp_many(table: TradeoffTable, a: np.ndarray, warn: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """ln C and D linear in 1/a; past the last point the last segment is extended."""
    xs = np.asarray(table.inverse_alphas)
    ln_c = np.log(np.asarray(table.C))
    ds = np.asarray(table.D)
    x = 1.0 / a

    ln_c_at = np.interp(x, xs, ln_c)
    d_at = np.interp(x, xs, ds)
    beyond = x > xs[-1]
    if np.any(beyond):
        (logger.warning if warn else logger.debug)(f"Extrapolating tradeoff penalties beyond alpha=1/{xs[-1]:g}")
        dx = x[beyond] - xs[-1]
        ln_c_at[beyond] = ln_c[-1] + dx * (ln_c[-1] - ln_c[-2]) / (xs[-1] - xs[-2])
        d_at[beyond] = ds[-1] + dx * (ds[-1] - ds[-2]) / (xs[-1] - xs[-2])
    with np.errstate(over="ignore"):
        return np.exp(ln_c_at), d_at


def interpolate_CD(table: TradeoffTable, a: float) -> tuple[float, float]:
    """C(a), D(a); exact on table points."""
    if not 0 < a <= 1:
        raise InvalidParameterError(f"memory fraction must be in (0, 1], got {a}")
    x = 1 / a
    for k, xk in enumerate(table.inverse_alphas):
        if math.isclose(x, xk, rel_tol=1e-12):
            return table.C[k], table.D[k]
    c, d = _interp_many(table, np.array([float(a)]))
    return float(c[0]), float(d[0])


@dataclass(frozen=True)
class CheatParams:
    alpha: float = 1.0
    eps: float = 0.0
    delta: float = 0.0
    beta: float = 0.0
    L: int = 70
    d: int = 0
    T: int = 1 << 21
    ratio: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "eps", "delta", "beta"):
            if getattr(self, name) < 0:
                raise InvalidParameterError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.alpha + self.eps + self.delta > 1 + 1e-12:
            raise InvalidParameterError(
                f"alpha+eps+delta must be <= 1, got {self.alpha + self.eps + self.delta}"
            )
        if self.delta > 0 and self.eps == 0:
            raise InvalidParameterError("skewed blocks (delta > 0) need inconsistent blocks (eps > 0)")
        if self.L < 1 or self.T < 1 or self.d < 0 or self.ratio < 0:
            raise InvalidParameterError("L and T must be positive, d and ratio non-negative")

    @property
    def s(self) -> float:
        return self.alpha + self.eps + self.delta


@dataclass(frozen=True)
class CostReport:
    calls_honest: float
    calls_cheater: float
    at_ratio: float
    gamma: float
    depth_penalty_fill: float
    depth_penalty_search: float

    @property
    def depth_penalty(self) -> float:
        return self.depth_penalty_fill


def at_ratio(params: CheatParams, table: TradeoffTable | None = None) -> float:
    """α·D(α) + C(α)·β, the time-area product relative to the honest one."""
    table = table or default_table()
    c, d = interpolate_CD(table, params.alpha)
    return params.alpha * d + c * params.beta


def bandwidth_depth_bound(C: float, bw: float, bw_max: float) -> float:
    """Lower bound C·bw/bw_max on the depth penalty set by memory bandwidth."""
    if bw_max <= 0:
        raise InvalidParameterError(f"bw_max must be > 0, got {bw_max}")
    return C * bw / bw_max


def gamma(eps: float, L: int) -> float:
    """Chance that L uniform openings miss every inconsistent block."""
    return (1 - eps) ** L


def chunk_skew_cost(alpha: float, eps: float, delta: float) -> float:
    """(α+ε)^(-δ/ε): extra calls per consistent chunk to steer its δ/ε skewed blocks."""
    if delta == 0:
        return 1.0
    if eps <= 0:
        raise InvalidParameterError("skewed blocks (delta > 0) need inconsistent blocks (eps > 0)")
    return (alpha + eps) ** (-delta / eps)


def _skew_terms(alpha: float, eps: float, delta: float) -> tuple[float, float]:
    fill = eps * (alpha + eps) ** (-delta / eps) if eps > 0 else 0.0
    search = delta * delta / (2 * eps) if delta > 0 else 0.0
    return fill, search


def cheater_calls(params: CheatParams, table: TradeoffTable | None = None) -> CostReport:
    """Expected F calls of a cheater storing α, faking ε and skewing δ of the memory."""
    table = table or default_table()
    a, e, dl = params.alpha, params.eps, params.delta
    if params.s <= 0:
        raise InvalidParameterError("alpha+eps+delta must be > 0")
    c_s, d_s = interpolate_CD(table, min(params.s, 1.0))
    skew_fill, skew_search = _skew_terms(a, e, dl)
    g = gamma(e, params.L)
    searches = 2.0 ** params.d * params.L

    calls = ((c_s + skew_fill) * params.T + searches * (c_s + skew_search)) / g
    return CostReport(
        calls_honest=params.T + searches,
        calls_cheater=calls,
        at_ratio=at_ratio(params, table) if a > 0 else params.beta * c_s,
        gamma=g,
        depth_penalty_fill=d_s,
        depth_penalty_search=d_s + skew_search,
    )


def _grid(step: float = GRID_STEP) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n = int(round(1 / step))
    k = np.arange(n + 1)
    ia, ie, idl = np.meshgrid(k, k, k, indexing="ij")
    keep = (ia + ie + idl <= n) & (ia + ie + idl > 0) & ~((idl > 0) & (ie == 0))
    return ia[keep] * step, ie[keep] * step, idl[keep] * step


def _phase_costs(table: TradeoffTable, a, e, dl, beta):
    s = np.minimum(a + e + dl, 1.0)
    c_s, d_s = _interp_many(table, s, warn=False)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        skew_fill = np.where(e > 0, e * np.power(np.where(e > 0, a + e, 1.0), -np.where(e > 0, dl / e, 0.0)), 0.0)
        skew_search = np.where(dl > 0, dl * dl / (2 * np.where(e > 0, e, 1.0)), 0.0)
    at_fill = a * d_s + beta * (c_s + skew_fill)
    at_search = a * (d_s + skew_search) + beta * (c_s + skew_search)
    return at_fill, at_search


def optimal_L(ratio: float, max_advantage: float, table: TradeoffTable | None = None,
              beta: float = DEFAULT_BETA, step: float = GRID_STEP) -> int:
    """
    Smallest L for which no grid strategy gains a time-area advantage of `max_advantage` or more.

    A strategy's advantage is (1+ratio)·γ / (AT_fill + ratio·AT_search), each
    phase cost relative to the honest prover.
    """
    if ratio <= 0:
        raise InvalidParameterError(f"ratio must be > 0, got {ratio}")
    if max_advantage <= 1:
        raise InvalidParameterError(f"max_advantage must be > 1, got {max_advantage}")
    table = table or default_table()
    a, e, dl = _grid(step)
    at_fill, at_search = _phase_costs(table, a, e, dl, beta)
    cost = at_fill + ratio * at_search

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        w = max_advantage * cost / (1 + ratio)
        safe_at_one = w > 1 - e
        log_one_minus = np.log1p(-np.where(e < 1, e, 0.5))
        bound = np.floor(np.log(np.where(w > 0, w, 1.0)) / log_one_minus) + 1
        needed = np.where(safe_at_one, 1.0, np.where((e > 0) & (e < 1) & (w > 0), bound, np.inf))

    worst = float(np.max(needed))
    if not math.isfinite(worst):
        raise InvalidParameterError(
            f"no L bounds the advantage below {max_advantage}: a consistent strategy already exceeds it"
        )
    return max(1, int(worst))


def optimal_L_grid(ratios=(0.1, 1, 10, 100, 1000), advantages=(2, 4, 8, 16, 32),
           table: TradeoffTable | None = None, beta: float = DEFAULT_BETA) -> list[list[int]]:
    """optimal_L over a grid: one row per advantage, one column per ratio."""
    table = table or default_table()
    return [[optimal_L(r, adv, table, beta) for r in ratios] for adv in advantages]


def parallel_inconsistency(R: int) -> float:
    """Closed form 0.5 − ln R / 2R for the inconsistent fraction of an R-way parallel fill."""
    if R < 2:
        raise InvalidParameterError(f"R must be >= 2, got {R}")
    return 0.5 - math.log(R) / (2 * R)


def parallel_inconsistency_exact(R: int, T: int | None = None) -> float:
    """
    Expected inconsistent fraction of the lockstep model simulated below.

    Without T this is the limit for long chains; with T it is the exact
    finite sum over the T/R steps.
    """
    if R < 2:
        raise InvalidParameterError(f"R must be >= 2, got {R}")
    if T is None:
        return sum(m * ((m + 1) * math.log((m + 1) / m) - 1) for m in range(1, R)) / R
    if T % R:
        raise InvalidParameterError(f"T={T} must be divisible by R={R}")
    n = T // R
    i = np.arange(n, dtype=float)
    return float(sum(np.sum(m * (n - i) / (m * n + i)) for m in range(1, R)) / T)


def simulate_parallel_fill(R: int, T: int, trials: int = 1, seed: int = 0) -> float:
    """
    R cores each compute a T/R-block segment of one chain in lockstep.

    Every block references a uniformly random earlier block; a reference to
    a block another core has not produced yet makes the block inconsistent.
    """
    if R < 2:
        raise InvalidParameterError(f"R must be >= 2, got {R}")
    if T % R:
        raise InvalidParameterError(f"T={T} must be divisible by R={R}")
    rng = np.random.default_rng(seed)
    n = T // R
    g = np.arange(1, T)
    core, step = g // n, g % n
    bad = 0
    for _ in range(trials):
        ref = np.floor(rng.random(g.size) * g).astype(np.int64)
        ref_core, ref_step = ref // n, ref % n
        bad += int(np.count_nonzero((ref_core < core) & (ref_step >= step)))
    return bad / (T * trials)


def itsuku_log_overhead(e: float) -> float:
    return (2 - 2 / e) * math.log(e) - 9 * math.log1p(-e)


def itsuku_overhead(e: float) -> float:
    """e^(2−2/e) / (1−e)^9: per-block cost of filling Itsuku memory with no storage."""
    if not 0 < e < 1:
        raise InvalidParameterError(f"e must be in (0, 1), got {e}")
    return math.exp(itsuku_log_overhead(e))


def itsuku_search_overhead(e: float) -> float:
    if not 0 < e < 1:
        raise InvalidParameterError(f"e must be in (0, 1), got {e}")
    return 2 / (e * e)


def itsuku_minimize(lo: float = 0.01, hi: float = 0.99, tol: float = 1e-4) -> tuple[float, float]:
    """Golden-section search of the overhead (in log space)."""
    a, b = lo, hi
    c = b - _GOLDEN * (b - a)
    d = a + _GOLDEN * (b - a)
    fc, fd = itsuku_log_overhead(c), itsuku_log_overhead(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _GOLDEN * (b - a)
            fc = itsuku_log_overhead(c)
        else:
            a, c, fc = c, d, fd
            d = a + _GOLDEN * (b - a)
            fd = itsuku_log_overhead(d)
    e = (a + b) / 2
    return e, itsuku_overhead(e)


def _h(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=32).digest()


def naive_indices(root: bytes, params: PowParams) -> list[int]:
    """L openings derived from the root alone, with no chain through the blocks."""
    return [select_index(_h(root + struct.pack("<I", j)), params) for j in range(params.L)]


@dataclass(frozen=True)
class NaiveProof:
    root: bytes
    last_block: MBlock
    last_path: OpeningPath
    entries: tuple[ProofEntry, ...]


def naive_pow_prove(challenge: bytes, memory, tree, params: PowParams) -> NaiveProof:
    """Proof for the naive scheme: the last block, its opening and L root-selected entries."""
    entries = []
    for i in naive_indices(tree.root, params):
        prev = memory.block(i - 1)
        phi = phi_index(prev, i, params.mem)
        entries.append(ProofEntry(i, phi, prev, memory.block(phi), tree.open(i - 1), tree.open(phi), tree.open(i)))
    last = params.T - 1
    return NaiveProof(tree.root, memory.block(last), tree.open(last), tuple(entries))


def naive_pow_verify(challenge: bytes, proof: NaiveProof, params: PowParams) -> bool:
    """Difficulty on H(X[T-1]) plus L openings chosen from the root."""
    if not int.from_bytes(_h(proof.last_block.to_bytes()), "little") % (1 << params.d) == 0:
        return False
    if not verify_opening(proof.root, params.T - 1, proof.last_block, proof.last_path, params.depth):
        return False
    h0 = initial_digest(challenge)
    expected = naive_indices(proof.root, params)
    if [e.i for e in proof.entries] != expected:
        return False
    for e in proof.entries:
        if phi_index(e.block_prev, e.i, params.mem) != e.phi:
            return False
        current = compress(e.block_prev, e.block_ref, e.i, h0, params.mem)
        checks = ((e.i - 1, e.block_prev, e.path_prev), (e.phi, e.block_ref, e.path_ref), (e.i, current, e.path_cur))
        if not all(verify_opening(proof.root, k, b, p, params.depth) for k, b, p in checks):
            return False
    return True


def _grind_block(rng: np.random.Generator, d: int) -> tuple[MBlock, int]:
    tries = 0
    while True:
        tries += 1
        block = MBlock.from_bytes(rng.bytes(1024))
        if int.from_bytes(_h(block.to_bytes()), "little") % (1 << d) == 0:
            return block, tries


@dataclass(frozen=True)
class GrindingReport:
    naive_escape: float
    naive_expected: float
    mtp_successes: int
    mtp_trials: int
    mean_grind_tries: float
    cross_checked: int


def simulate_grinding(T: int = 1 << 10, L: int = 16, d: int = 4, trials: int = 1000,
                      mtp_trials: int | None = None, seed: int = 0, cross_checks: int = 3) -> GrindingReport:
    """
    Forge only the last block by grinding it through the difficulty test.

    Against the naive scheme the forger re-commits and escapes unless the
    root happens to select the forged block. Against MTP the forged block
    must stand in for an opened block of an already committed memory and
    every attempt fails its opening.
    """
    if T > 1 << 12 or d > 16:
        raise InvalidParameterError("grinding simulation is meant for T <= 2^12 and d <= 16")
    rng = np.random.default_rng(seed)
    params = PowParams(MemParams(T=T, p=1), L=L, d=d)
    challenge = rng.bytes(32)
    h0 = initial_digest(challenge)
    memory = fill_from_digest(h0, params.mem)
    tree = build_tree(memory)

    escapes = 0
    tries = 0
    checked = 0
    for k in range(trials):
        forged, n = _grind_block(rng, d)
        tries += n
        forged_tree = tree.replace_leaf(T - 1, forged)
        escaped = (T - 1) not in naive_indices(forged_tree.root, params)
        escapes += escaped
        if k < cross_checks:
            proof = naive_pow_prove(challenge, memory, forged_tree, params)
            proof = NaiveProof(proof.root, forged, forged_tree.open(T - 1), proof.entries)
            if naive_pow_verify(challenge, proof, params) != escaped:
                raise RuntimeError("naive verifier disagrees with the membership shortcut")
            checked += 1

    mtp_params = PowParams(MemParams(T=T, p=1), L=L, d=0)
    successes = 0
    mtp_trials = trials if mtp_trials is None else mtp_trials
    for nonce in range(mtp_trials):
        proof, _ = assemble_proof(challenge, memory, tree, nonce, mtp_params)
        forged, n = _grind_block(rng, d)
        first = proof.entries[0]
        entries = (ProofEntry(first.i, first.phi, first.block_prev, forged, first.path_prev,
                              first.path_ref, first.path_cur),) + proof.entries[1:]
        forged_proof = Proof(proof.params, proof.challenge, proof.root, proof.nonce, entries)
        successes += bool(verify(forged_proof, mtp_params))

    report = GrindingReport(
        naive_escape=escapes / trials,
        naive_expected=(1 - 1 / T) ** L,
        mtp_successes=successes,
        mtp_trials=mtp_trials,
        mean_grind_tries=tries / trials,
        cross_checked=checked,
    )
    logger.info(f"Grinding: naive escape {report.naive_escape:.4f} "
                f"(expected {report.naive_expected:.4f}), MTP {successes}/{mtp_trials}")
    return report


@dataclass(frozen=True)
class DetectionReport:
    escape_rate: float
    expected: float
    inconsistent: int
    trials: int
    cross_checked: int


def simulate_inconsistent_prover(T: int = 1 << 10, L: int = 8, eps: float = 0.125, trials: int = 1000,
                                 seed: int = 0, lanes: int = 1, cross_checks: int = 3) -> DetectionReport:
    """
    Substitute ⌈ε·T'⌉ of the T' openable blocks during the fill, commit, and count
    the nonces whose L selected blocks miss every substitute.
    """
    if not 0 < eps < 1:
        raise InvalidParameterError(f"eps must be in (0, 1), got {eps}")
    rng = np.random.default_rng(seed)
    params = PowParams(MemParams(T=T, p=lanes), L=L, d=0)
    challenge = rng.bytes(32)
    h0 = initial_digest(challenge)

    count = math.ceil(eps * params.eligible_count)
    positions = rng.choice(params.eligible_count, size=count, replace=False)
    per_lane = params.mem.lane_length - 2
    bad = {int(r // per_lane) * params.mem.lane_length + 2 + int(r % per_lane) for r in positions}
    overrides = {i: MBlock.from_bytes(rng.bytes(1024)) for i in sorted(bad)}

    memory = fill_from_digest(h0, params.mem, inconsistent=overrides)
    tree = build_tree(memory)

    escapes = 0
    checked = 0
    for nonce in range(trials):
        escaped = not bad.intersection(chain_indices(challenge, memory, tree.root, nonce, params))
        escapes += escaped
        if nonce < cross_checks:
            proof, _ = assemble_proof(challenge, memory, tree, nonce, params)
            if bool(verify(proof, params)) != escaped:
                raise RuntimeError("verifier disagrees with the membership shortcut")
            checked += 1

    report = DetectionReport(
        escape_rate=escapes / trials,
        expected=gamma(count / params.eligible_count, L),
        inconsistent=count,
        trials=trials,
        cross_checked=checked,
    )
    logger.info(f"Detection: eps={eps}, L={L}: escape {report.escape_rate:.4f}, expected {report.expected:.4f}")
    return report
