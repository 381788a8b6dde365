import csv
import io
import json
import logging
import os
import sys
import tempfile
import time
import tracemalloc
from pathlib import Path

import click

from . import costmodel, mhe, mtp
from .argon2m import InvalidParameterError, MemParams, dump_block_hex, fill_memory
from .config import load_preset, runtime_settings
from .merkle import DIGEST_SIZE, build_tree, shared_path_size

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_MALFORMED = 2
EXIT_NOT_FOUND = 3

REFERENCE_FILL_CPB = 0.7
REFERENCE_FILL_SECONDS_2GIB = 0.4
REFERENCE_PROOF_KIB = 187

MHE_DEFAULTS = {"blocks": 1088, "q": 64, "passes": 1, "header_mode": "per-chunk", "cipher": "aes-256"}


def write_atomic(path: str | Path, data: bytes) -> None:
    """Write to a temp file in the target directory, then rename over `path`."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


def _fail(message: str, code: int) -> None:
    if (click.get_current_context().find_root().obj or {}).get("verbose"):
        logger.exception(message)
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _emit(as_json: bool, payload: dict, text: str) -> None:
    click.echo(json.dumps(payload, indent=2) if as_json else text)


def _emit_table(as_json: bool, as_csv: bool, header: list[str], rows: list[list]) -> None:
    if as_json:
        click.echo(json.dumps([dict(zip(header, row)) for row in rows], indent=2))
        return
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="," if as_csv else "\t", lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    click.echo(buf.getvalue(), nl=False)


def _parse_hex(value: str) -> bytes:
    try:
        return bytes.fromhex(value)
    except ValueError:
        _fail(f"challenge is not valid hex: {value!r}", EXIT_MALFORMED)


def _read_challenge(challenge: str | None, challenge_file: str | None) -> bytes:
    if challenge_file:
        try:
            return Path(challenge_file).read_bytes()
        except OSError as e:
            _fail(f"cannot read challenge file: {e}", EXIT_MALFORMED)
    if challenge is None:
        _fail("either --challenge or --challenge-file is required", EXIT_MALFORMED)
    return _parse_hex(challenge)


def _merge(preset: str | None, default: str | None, overrides: dict) -> dict:
    base = {}
    name = preset or default
    if name:
        try:
            base = load_preset(name)
        except (FileNotFoundError, ValueError) as e:
            _fail(str(e), EXIT_MALFORMED)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return base


def _pow_params(preset, blocks, lanes, L, d) -> mtp.PowParams:
    values = _merge(preset, "desk", {"blocks": blocks, "lanes": lanes, "L": L, "d": d})
    if values.get("kind", "mtp") != "mtp":
        _fail(f"preset '{preset}' is not a proof-of-work preset", EXIT_MALFORMED)
    try:
        return mtp.PowParams(MemParams(T=values["blocks"], p=values["lanes"], t=1), L=values["L"], d=values["d"])
    except InvalidParameterError as e:
        _fail(str(e), EXIT_MALFORMED)


def pow_options(f):
    f = click.option("--preset", default=None, help="Named parameter preset (default: desk).")(f)
    f = click.option("-T", "--blocks", type=int, default=None, help="Memory size in 1 KiB blocks.")(f)
    f = click.option("-p", "--lanes", type=int, default=None, help="Lane count.")(f)
    f = click.option("-L", "L", type=int, default=None, help="Openings per proof.")(f)
    f = click.option("-d", "d", type=int, default=None, help="Difficulty in trailing zero bits.")(f)
    return f


def json_option(f):
    return click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")(f)


def threads_option(f):
    return click.option("--threads", type=int, default=None,
                        help="Worker threads (default: EGALITARIAN_THREADS or CPU count).")(f)


def _threads(threads: int | None) -> int:
    return max(1, threads or runtime_settings().threads)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Debug logging and tracebacks.")
@click.pass_context
def cli(ctx: click.Context, verbose: bool) -> None:
    """Memory-hard proof of work, memory-hard encryption and attacker cost analysis."""
    ctx.ensure_object(dict)
    ctx.obj["verbose"] = verbose
    if verbose:
        logging.getLogger().setLevel(logging.DEBUG)


@cli.command()
@pow_options
@click.option("--challenge", default=None, help="Challenge I as hex.")
@click.option("--challenge-file", type=click.Path(dir_okay=False), default=None, help="Read I from a file.")
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False), help="Proof file to write.")
@click.option("--nonce-start", type=int, default=0, show_default=True)
@click.option("--nonce-limit", type=int, default=1 << 20, show_default=True)
@threads_option
@json_option
def prove(preset, blocks, lanes, L, d, challenge, challenge_file, output, nonce_start, nonce_limit, threads, as_json):
    """Fill memory, commit to it and search for a nonce."""
    params = _pow_params(preset, blocks, lanes, L, d)
    data = _read_challenge(challenge, challenge_file)
    try:
        outcome = mtp.prove(data, params, nonce_start, nonce_limit, _threads(threads))
    except (InvalidParameterError, MemoryError) as e:
        _fail(str(e), EXIT_MALFORMED)

    payload = {
        "found": outcome.found,
        "nonces": outcome.nonces_tried,
        "elapsed": round(outcome.elapsed, 4),
        "fill_seconds": round(outcome.fill_seconds, 4),
        "tree_seconds": round(outcome.tree_seconds, 4),
    }
    if not outcome.found:
        _emit(as_json, payload, f"no proof after {outcome.nonces_tried} nonces ({outcome.elapsed:.2f}s)")
        sys.exit(EXIT_NOT_FOUND)

    encoded = outcome.proof.to_bytes()
    try:
        write_atomic(output, encoded)
    except OSError as e:
        _fail(f"cannot write proof: {e}", EXIT_MALFORMED)
    payload.update({"nonce": outcome.proof.nonce, "bytes": len(encoded), "output": str(output)})
    _emit(as_json, payload,
          f"proof at nonce {outcome.proof.nonce}: {outcome.nonces_tried} nonces, "
          f"{outcome.elapsed:.2f}s, {len(encoded)} bytes -> {output}")


@cli.command()
@click.argument("proof_file", type=click.Path(dir_okay=False))
@pow_options
@json_option
def verify(proof_file, preset, blocks, lanes, L, d, as_json):
    """Check a proof without the memory; exit 0 accept, 1 reject, 2 malformed."""
    try:
        buf = Path(proof_file).read_bytes()
    except OSError as e:
        _fail(f"cannot read proof: {e}", EXIT_MALFORMED)

    # never taken from the proof itself
    params = _pow_params(preset, blocks, lanes, L, d)
    tracemalloc.start()
    try:
        result = mtp.verify(mtp.deserialize(buf, params), params)
        _, peak = tracemalloc.get_traced_memory()
    except mtp.MalformedProofError as e:
        _emit(as_json, {"accepted": False, "reason": mtp.RejectReason.MALFORMED_ENCODING.value, "detail": str(e)},
              f"reject: malformed-encoding ({e})")
        sys.exit(EXIT_MALFORMED)
    finally:
        tracemalloc.stop()

    payload = {
        "accepted": result.accepted,
        "reason": result.reason.value if result.reason else None,
        "entry": result.entry,
        "peak_bytes": peak,
    }
    _emit(as_json, payload, f"{result.describe()} (peak memory {peak / 1024:.0f} KiB)")
    if result.accepted:
        return
    sys.exit(EXIT_MALFORMED if result.reason is mtp.RejectReason.MALFORMED_ENCODING else EXIT_REJECT)


def _read_password(password_stdin: bool, confirm: bool) -> bytes:
    if password_stdin:
        line = click.get_text_stream("stdin").readline()
        return line.rstrip("\r\n").encode()
    return click.prompt("Password", hide_input=True, confirmation_prompt=confirm).encode()


def _default_lanes(header_blocks: int) -> int:
    if header_blocks % 4 == 0 and (header_blocks // 4) >= 8 and (header_blocks // 4) % 4 == 0:
        return 4
    return 1


@cli.command()
@click.argument("input_file", type=click.Path(dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--preset", default=None, help="Named encryption preset.")
@click.option("-M", "--blocks", type=int, default=None, help="Total memory M in blocks.")
@click.option("-q", "q", type=int, default=None, help="Chunk length in blocks.")
@click.option("-t", "--passes", type=int, default=None)
@click.option("-p", "--lanes", type=int, default=None, help="Header lanes (default 4 when the header permits).")
@click.option("--mode", "header_mode", type=click.Choice(mhe.HEADER_MODES), default=None)
@click.option("--cipher", type=click.Choice(sorted(mhe.CIPHER_IDS)), default=None)
@click.option("--hash-blocks", is_flag=True, help="Hash memory blocks before encrypting them.")
@click.option("--no-tag", is_flag=True, help="Omit the per-chunk integrity tag.")
@click.option("--password-stdin", is_flag=True, help="Read the password from stdin.")
@click.option("--seed", type=int, default=None, hidden=True)
@threads_option
@json_option
def encrypt(input_file, output, preset, blocks, q, passes, lanes, header_mode, cipher, hash_blocks, no_tag,
            password_stdin, seed, threads, as_json):
    """Memory-hard encryption of a file."""
    values = _merge(preset, None, {"blocks": blocks, "q": q, "passes": passes, "lanes": lanes,
                                    "header_mode": header_mode, "cipher": cipher})
    if values.get("kind", "mhe") != "mhe":
        _fail(f"preset '{preset}' is not an encryption preset", EXIT_MALFORMED)
    values = {**MHE_DEFAULTS, **values}
    if "lanes" not in values:
        values["lanes"] = _default_lanes(values["blocks"] - values["q"])
    try:
        params = mhe.MheParams(M=values["blocks"], q=values["q"], t=values["passes"], cipher=values["cipher"],
                               header_mode=values["header_mode"], lanes=values["lanes"], hash_blocks=hash_blocks)
        data = Path(input_file).read_bytes()
    except InvalidParameterError as e:
        _fail(str(e), EXIT_MALFORMED)
    except OSError as e:
        _fail(f"cannot read input: {e}", EXIT_MALFORMED)

    password = _read_password(password_stdin, confirm=True)
    began = time.perf_counter()
    blob = mhe.encrypt_file(data, password, params, tag=not no_tag, seed=seed, workers=_threads(threads))
    elapsed = time.perf_counter() - began
    try:
        write_atomic(output, blob)
    except OSError as e:
        _fail(f"cannot write output: {e}", EXIT_MALFORMED)
    chunks = len(mhe.pad(data, params.chunk_bytes)) // params.chunk_bytes
    _emit(as_json, {"chunks": chunks, "bytes": len(blob), "elapsed": round(elapsed, 4), "mode": params.header_mode},
          f"{chunks} chunk(s), {len(blob)} bytes in {elapsed:.2f}s ({params.header_mode}) -> {output}")


@cli.command()
@click.argument("input_file", type=click.Path(dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--password-stdin", is_flag=True, help="Read the password from stdin.")
@threads_option
@json_option
def decrypt(input_file, output, password_stdin, threads, as_json):
    """Decrypt a container file; exit 1 on integrity failure."""
    try:
        blob = Path(input_file).read_bytes()
    except OSError as e:
        _fail(f"cannot read input: {e}", EXIT_MALFORMED)
    password = _read_password(password_stdin, confirm=False)
    try:
        data = mhe.decrypt_file(blob, password, workers=_threads(threads))
    except mhe.IntegrityError as e:
        _fail(f"integrity failure: {e}", EXIT_REJECT)
    except mhe.MalformedContainerError as e:
        _fail(f"malformed container: {e}", EXIT_MALFORMED)
    except MemoryError as e:
        _fail(f"container needs more memory than is available: {e}", EXIT_MALFORMED)
    try:
        write_atomic(output, data)
    except OSError as e:
        _fail(f"cannot write output: {e}", EXIT_MALFORMED)
    _emit(as_json, {"bytes": len(data), "output": str(output)}, f"{len(data)} bytes -> {output}")


@cli.command("dump-block")
@pow_options
@click.option("--challenge", required=True, help="Challenge I as hex.")
@click.option("-i", "--index", type=int, required=True, help="Block index.")
@threads_option
def dump_block(preset, blocks, lanes, L, d, challenge, index, threads):
    """Fill memory for a challenge and print block i as hex."""
    params = _pow_params(preset, blocks, lanes, L, d)
    try:
        memory, _ = fill_memory(_parse_hex(challenge), params.mem, _threads(threads))
        click.echo(dump_block_hex(memory, index))
    except InvalidParameterError as e:
        _fail(str(e), EXIT_MALFORMED)


@cli.command()
@click.option("-T", "--blocks", type=int, default=1 << 12, show_default=True)
@click.option("-p", "--lanes", type=int, default=4, show_default=True)
@click.option("-L", "L", type=int, default=70, show_default=True)
@click.option("--ghz", type=float, default=3.0, show_default=True, help="Clock used to turn seconds into cycles.")
@threads_option
@json_option
def bench(blocks, lanes, L, ghz, threads, as_json):
    """Time the fill and the tree and size a proof, beside reference figures."""
    try:
        params = mtp.PowParams(MemParams(T=blocks, p=lanes), L=L, d=0)
    except InvalidParameterError as e:
        _fail(str(e), EXIT_MALFORMED)
    workers = _threads(threads)
    challenge = b"bench"

    began = time.perf_counter()
    memory, _ = fill_memory(challenge, params.mem, workers)
    fill_s = time.perf_counter() - began
    began = time.perf_counter()
    tree = build_tree(memory, workers)
    tree_s = time.perf_counter() - began

    proof, _ = mtp.assemble_proof(challenge, memory, tree, 0, params)
    full = mtp.proof_size(params, len(challenge))
    shared = sum(shared_path_size((e.path_prev, e.path_ref, e.path_cur)) for e in proof.entries)
    shared_bytes = full - 3 * L * params.depth * DIGEST_SIZE + shared * DIGEST_SIZE

    cpb = fill_s * ghz * 1e9 / memory.nbytes
    payload = {
        "blocks": blocks,
        "fill_seconds": round(fill_s, 4),
        "fill_cpb": round(cpb, 2),
        "tree_seconds": round(tree_s, 4),
        "proof_bytes": full,
        "proof_bytes_shared_paths": shared_bytes,
        "reference": {"fill_cpb": REFERENCE_FILL_CPB, "fill_seconds_2gib": REFERENCE_FILL_SECONDS_2GIB,
                  "proof_kib": REFERENCE_PROOF_KIB},
    }
    text = "\n".join([
        f"fill\t{fill_s:.3f}s\t{cpb:.1f} cpb\t(reference: {REFERENCE_FILL_CPB} cpb, "
        f"{REFERENCE_FILL_SECONDS_2GIB}s per 2 GiB)",
        f"tree\t{tree_s:.3f}s",
        f"proof\t{full / 1024:.1f} KiB full paths\t{shared_bytes / 1024:.1f} KiB shared paths"
        f"\t(reference: ~{REFERENCE_PROOF_KIB} KiB at T=2^21, L=70)",
    ])
    _emit(as_json, payload, text)


@cli.group()
def cost():
    """Attacker cost formulas and simulations."""


def _cost_call(fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except (InvalidParameterError, FileNotFoundError, ValueError) as e:
        _fail(str(e), EXIT_MALFORMED)


@cost.command("at")
@click.option("--alpha", type=float, required=True)
@click.option("--beta", type=float, default=costmodel.DEFAULT_BETA, show_default=True)
@json_option
def cost_at(alpha, beta, as_json):
    """Time-area product of a prover storing an alpha fraction of memory."""
    params = _cost_call(costmodel.CheatParams, alpha=alpha, beta=beta)
    value = _cost_call(costmodel.at_ratio, params)
    _emit(as_json, {"alpha": alpha, "beta": beta, "at_ratio": value}, f"{value}")


@cost.command("calls")
@click.option("--alpha", type=float, default=1.0, show_default=True)
@click.option("--eps", type=float, default=0.0, show_default=True)
@click.option("--delta", type=float, default=0.0, show_default=True)
@click.option("--beta", type=float, default=costmodel.DEFAULT_BETA, show_default=True)
@click.option("-L", "L", type=int, default=70, show_default=True)
@click.option("-d", "d", type=int, default=0, show_default=True)
@click.option("-T", "--blocks", type=int, default=1 << 21, show_default=True)
@json_option
def cost_calls(alpha, eps, delta, beta, L, d, blocks, as_json):
    """Expected compression calls of a cheating prover."""
    params = _cost_call(costmodel.CheatParams, alpha=alpha, eps=eps, delta=delta, beta=beta, L=L, d=d, T=blocks)
    report = _cost_call(costmodel.cheater_calls, params)
    payload = {
        "calls_honest": report.calls_honest,
        "calls_cheater": report.calls_cheater,
        "gamma": report.gamma,
        "at_ratio": report.at_ratio,
        "depth_fill": report.depth_penalty_fill,
        "depth_search": report.depth_penalty_search,
    }
    _emit(as_json, payload, "\n".join(f"{k}\t{v:.10g}" for k, v in payload.items()))


@cost.command("optimal-L")
@click.option("--ratio", type=float, multiple=True, required=True, help="Search/initialization ratio (repeatable).")
@click.option("--advantage", type=float, required=True)
@click.option("--beta", type=float, default=costmodel.DEFAULT_BETA, show_default=True)
@click.option("--csv", "as_csv", is_flag=True)
@json_option
def cost_optimal_L(ratio, advantage, beta, as_csv, as_json):
    """Smallest L keeping every cheating strategy below an advantage."""
    rows = [[r, _cost_call(costmodel.optimal_L, r, advantage, beta=beta)] for r in ratio]
    if len(rows) == 1 and not (as_csv or as_json):
        click.echo(f"{rows[0][1]}")
        return
    _emit_table(as_json, as_csv, ["ratio", "L"], rows)


@cost.command("optimal-L-grid")
@click.option("--csv", "as_csv", is_flag=True)
@json_option
def cost_optimal_L_grid(as_csv, as_json):
    """Optimal L for the standard ratio and advantage axes."""
    ratios = (0.1, 1, 10, 100, 1000)
    grid = _cost_call(costmodel.optimal_L_grid, ratios)
    rows = [[adv] + row for adv, row in zip((2, 4, 8, 16, 32), grid)]
    _emit_table(as_json, as_csv, ["advantage"] + [f"ratio={r:g}" for r in ratios], rows)


@cost.command("tradeoffs")
@click.option("--csv", "as_csv", is_flag=True)
@json_option
def cost_tradeoffs(as_csv, as_json):
    """The tradeoff penalties the cost model interpolates."""
    table = _cost_call(costmodel.default_table)
    rows = [[f"1/{1 / a:g}", c, d] for a, c, d in table.rows()]
    _emit_table(as_json, as_csv, ["alpha", "C", "D"], rows)


@cost.command("itsuku")
@click.option("--minimize", is_flag=True, help="Find the overhead-minimizing inconsistent fraction.")
@click.option("--e", "e", type=float, default=None, help="Evaluate the overhead at this fraction.")
@json_option
def cost_itsuku(minimize, e, as_json):
    """Overhead of filling Itsuku memory with almost no storage."""
    if minimize or e is None:
        e_star, overhead = costmodel.itsuku_minimize()
        search = costmodel.itsuku_search_overhead(e_star)
        _emit(as_json, {"e": e_star, "overhead": overhead, "search_overhead": search},
              f"e*={e_star:.2f}, overhead≈{overhead:.0f}, search overhead≈{search:.1f}")
        return
    overhead = _cost_call(costmodel.itsuku_overhead, e)
    search = costmodel.itsuku_search_overhead(e)
    _emit(as_json, {"e": e, "overhead": overhead, "search_overhead": search},
          f"e={e:g}, overhead≈{overhead:.1f}, search overhead≈{search:.1f}")


@cost.command("parallel")
@click.option("-R", "R", type=int, multiple=True, required=True, help="Core count (repeatable).")
@click.option("--simulate", is_flag=True)
@click.option("-T", "--blocks", type=int, default=1 << 16, show_default=True)
@click.option("--trials", type=int, default=1, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--csv", "as_csv", is_flag=True)
@json_option
def cost_parallel(R, simulate, blocks, trials, seed, as_csv, as_json):
    """Inconsistent fraction forced on an R-way parallel fill."""
    header = ["R", "formula", "expected"] + (["simulated"] if simulate else [])
    rows = []
    for r in R:
        row = [r, _cost_call(costmodel.parallel_inconsistency, r), costmodel.parallel_inconsistency_exact(r)]
        if simulate:
            row.append(_cost_call(costmodel.simulate_parallel_fill, r, blocks, trials, seed))
        rows.append([round(v, 4) if isinstance(v, float) else v for v in row])
    _emit_table(as_json, as_csv, header, rows)


@cost.command("grinding")
@click.option("-T", "--blocks", type=int, default=1 << 10, show_default=True)
@click.option("-L", "L", type=int, default=16, show_default=True)
@click.option("-d", "d", type=int, default=4, show_default=True)
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@json_option
def cost_grinding(blocks, L, d, trials, seed, as_json):
    """Forge the last block against the naive scheme and against MTP."""
    report = _cost_call(costmodel.simulate_grinding, blocks, L, d, trials, seed=seed)
    payload = {
        "naive_escape": report.naive_escape,
        "naive_expected": report.naive_expected,
        "mtp_successes": report.mtp_successes,
        "mtp_trials": report.mtp_trials,
        "mean_grind_tries": report.mean_grind_tries,
    }
    _emit(as_json, payload,
          f"naive\t{report.naive_escape:.4f}\t(expected {report.naive_expected:.4f})\n"
          f"mtp\t{report.mtp_successes}/{report.mtp_trials}")


@cost.command("detection")
@click.option("-T", "--blocks", type=int, default=1 << 10, show_default=True)
@click.option("-L", "L", type=int, default=8, show_default=True)
@click.option("--eps", type=float, default=0.125, show_default=True)
@click.option("--trials", type=int, default=1000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@json_option
def cost_detection(blocks, L, eps, trials, seed, as_json):
    """Escape rate of a prover with inconsistent blocks."""
    report = _cost_call(costmodel.simulate_inconsistent_prover, blocks, L, eps, trials, seed=seed)
    _emit(as_json, {"escape_rate": report.escape_rate, "expected": report.expected,
                    "inconsistent": report.inconsistent, "trials": report.trials},
          f"escape\t{report.escape_rate:.4f}\t(expected {report.expected:.4f}, "
          f"{report.inconsistent} inconsistent blocks)")
