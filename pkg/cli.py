"""
Command-line front end for the bucket oblivious sort toolkit.

    python cli.py sort --z 512 --seed 7 in.txt out.txt
    python cli.py orp in.txt out.txt
    python cli.py trace --algo orp --n 64 --z 16 -o run.trace
    python cli.py bench --z 512 --n 65536 --algos bucket,bitonic,merge
    python cli.py overflow --n 96 --z 12 --trials 100000
    python cli.py locality --n 1024,16384 --z 32 --mode const --disks 3
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from analysis import (
    chernoff_bucket_bound,
    cost_frame,
    epsilon_bound,
    measured_costs,
    overflow_monte_carlo,
    predict_costs,
)
from bin_assign import random_bin_assignment
from config import (
    DEFAULT_BUCKET_SIZE,
    DEFAULT_DISKS,
    DEFAULT_PAYLOAD_WIDTH,
    DEFAULT_SEED,
    DEFAULT_TRIALS,
    EXIT_IO,
    EXIT_OK,
    EXIT_OVERFLOW,
    EXIT_USAGE,
    FLOAT_FORMAT,
    KEY_BYTES,
    LOCALITY_COLUMNS,
    OVERFLOW_COLUMNS,
    SEED_ENV_VAR,
)
from core import ClientMode, ObliviousSortError, Overflow, as_elements, ceil_log2, derive_params, element_dtype
from memory import TraceMode
from orp import bucket_orp, bucket_orp_with_retry
from osort import bitonic_sort_baseline, bucket_osort, merge_sort_baseline
from rng import RngStream, StreamPurpose, parse_seed

logger = logging.getLogger(__name__)

BENCH_ALGOS = ("bin_assign", "orp", "bucket", "bitonic", "merge")
LOCALITY_ALGOS = ("osort", "merge")
TRACE_ALGOS = ("bin_assign", "orp", "osort", "merge")


class CliParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_USAGE instead of argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"Error: {message}\n")


def _int_list(text):
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("expected at least one value")
    return values


def _name_list(choices):
    def parse(text):
        names = [part.strip() for part in text.split(",") if part.strip()]
        unknown = [name for name in names if name not in choices]
        if unknown or not names:
            raise argparse.ArgumentTypeError(
                f"unknown algorithm(s) {','.join(unknown) or text!r}; choose from {','.join(choices)}"
            )
        return names
    return parse


def _add_common(parser, grid=False, disks=DEFAULT_DISKS):
    if grid:
        parser.add_argument("--z", type=_int_list, default=[DEFAULT_BUCKET_SIZE],
                            help="bucket sizes, comma separated")
    else:
        parser.add_argument("--z", type=int, default=DEFAULT_BUCKET_SIZE,
                            help=f"bucket size Z (default: {DEFAULT_BUCKET_SIZE})")
    parser.add_argument("--seed", default=None,
                        help=f"master seed, decimal or 0x-hex (default: ${SEED_ENV_VAR} or {DEFAULT_SEED})")
    parser.add_argument("--mode", choices=[m.value for m in ClientMode], default=ClientMode.BUCKET.value,
                        help="client storage mode")
    parser.add_argument("--disks", type=int, default=disks, help="number of disks in the memory model")
    parser.add_argument("--format", choices=["text", "binary"], default="text",
                        help="record file format")
    parser.add_argument("--payload-width", type=int, default=DEFAULT_PAYLOAD_WIDTH,
                        help="payload bytes per binary record")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress to stderr (-vv for debug)")


def build_parser():
    parser = CliParser(prog="cli.py", description="Bucket oblivious sort toolkit")
    commands = parser.add_subparsers(dest="command", metavar="command")
    commands.required = True

    sort = commands.add_parser("sort", help="sort a key file with bucket oblivious sort")
    _add_common(sort)
    sort.add_argument("input")
    sort.add_argument("output")
    sort.set_defaults(handler=run_sort)

    orp = commands.add_parser("orp", help="obliviously permute a key file")
    _add_common(orp)
    orp.add_argument("--max-attempts", type=int, default=1,
                     help="rerun with a fresh seed after an overflow, up to this many times")
    orp.add_argument("input")
    orp.add_argument("output")
    orp.set_defaults(handler=run_orp)

    trace = commands.add_parser("trace", help="write the access trace of one run")
    _add_common(trace)
    trace.add_argument("--algo", choices=TRACE_ALGOS, default="orp")
    trace.add_argument("--n", type=int, help="number of synthetic keys (instead of an input file)")
    trace.add_argument("-o", "--output", help="trace file (default: stdout)")
    trace.add_argument("input", nargs="?")
    trace.set_defaults(handler=run_trace)

    bench = commands.add_parser("bench", help="measured against predicted access counts")
    _add_common(bench, grid=True)
    bench.add_argument("--n", type=_int_list, required=True)
    bench.add_argument("--algos", type=_name_list(BENCH_ALGOS), default=["bucket", "bitonic", "merge"])
    bench.add_argument("-o", "--output", help="CSV file (default: stdout)")
    bench.set_defaults(handler=run_bench)

    overflow = commands.add_parser("overflow", help="Monte Carlo overflow rates against the bound")
    _add_common(overflow, grid=True)
    overflow.add_argument("--n", type=_int_list, required=True)
    overflow.add_argument("--trials", type=int, default=DEFAULT_TRIALS)
    overflow.add_argument("--workers", type=int, default=1)
    overflow.add_argument("-o", "--output", help="CSV file (default: stdout)")
    overflow.set_defaults(handler=run_overflow)

    locality = commands.add_parser("locality", help="head moves of disk-mode runs")
    _add_common(locality, grid=True, disks=3)
    locality.add_argument("--n", type=_int_list, required=True)
    locality.add_argument("--algos", type=_name_list(LOCALITY_ALGOS), default=list(LOCALITY_ALGOS))
    locality.add_argument("-o", "--output", help="CSV file (default: stdout)")
    locality.set_defaults(handler=run_locality)
    return parser


# ---------------------------------------------------------------------------
# Record files
# ---------------------------------------------------------------------------

def _record_dtype(payload_width):
    fields = [("key", "<u8")]
    if payload_width:
        fields.append(("payload", f"V{payload_width}"))
    return np.dtype(fields)


def read_records(path, fmt="text", payload_width=0):
    """Load keys (and payloads for binary files) as real elements."""
    if fmt == "binary":
        data = Path(path).read_bytes()
        dtype = _record_dtype(payload_width)
        if len(data) % dtype.itemsize:
            raise ValueError(
                f"{path}: {len(data)} bytes is not a whole number of "
                f"{KEY_BYTES}+{payload_width}-byte records"
            )
        raw = np.frombuffer(data, dtype=dtype)
        records = np.zeros(len(raw), dtype=element_dtype(payload_width))
        records["sort_key"] = raw["key"]
        records["is_real"] = True
        if payload_width:
            records["payload"] = raw["payload"]
        return records

    keys = []
    with open(path) as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                key = int(line)
            except ValueError:
                raise ValueError(f"{path}:{number}: not a decimal key: {line!r}")
            if not 0 <= key < 1 << 64:
                raise ValueError(f"{path}:{number}: key out of 64-bit range: {line}")
            keys.append(key)
    return as_elements(np.array(keys, dtype=np.uint64), payload_width)


def write_records(path, records, fmt="text", payload_width=0):
    if fmt == "binary":
        out = np.zeros(len(records), dtype=_record_dtype(payload_width))
        out["key"] = records["sort_key"]
        if payload_width:
            out["payload"] = records["payload"]
        Path(path).write_bytes(out.tobytes())
        return
    with open(path, "w", newline="\n") as f:
        f.write("".join(f"{key}\n" for key in records["sort_key"].tolist()))


def synthetic_keys(n, seed):
    return RngStream(seed, StreamPurpose.INPUT).next_u64(n)


def write_csv(frame, path):
    frame.to_csv(path if path else sys.stdout, index=False, float_format=FLOAT_FORMAT,
                 lineterminator="\n")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def resolve_seed(args):
    text = args.seed if args.seed is not None else os.environ.get(SEED_ENV_VAR)
    return DEFAULT_SEED if text is None else parse_seed(text)


def _params(args, n, Z=None, seed=None):
    return derive_params(
        n,
        args.z if Z is None else Z,
        client_mode=args.mode,
        seed=resolve_seed(args) if seed is None else seed,
        disks=args.disks,
        payload_width=args.payload_width,
    )


def _load(args):
    return read_records(args.input, args.format, args.payload_width)


def run_sort(args):
    records = _load(args)
    if not len(records):
        write_records(args.output, records, args.format, args.payload_width)
        print(f"Input {args.input} is empty; wrote an empty {args.output}")
        return EXIT_OK
    params = _params(args, len(records))
    result = bucket_osort(records, params, trace_mode=TraceMode.COUNTS)
    write_records(args.output, result.output, args.format, args.payload_width)
    print(f"Sorted {params.n} keys into {args.output}")
    print(f"  B={params.B} buckets of Z={params.Z}, {params.levels} levels, seed {params.seed:#x}")
    print(f"  {result.cost.measured_total} element accesses "
          f"({result.cost.predicted_total} predicted), {result.memory.moves} moves")
    return EXIT_OK


def run_orp(args):
    records = _load(args)
    if not len(records):
        write_records(args.output, records, args.format, args.payload_width)
        print(f"Input {args.input} is empty; wrote an empty {args.output}")
        return EXIT_OK
    params = _params(args, len(records))
    if args.max_attempts > 1:
        result = bucket_orp_with_retry(records, params, args.max_attempts, trace_mode=TraceMode.COUNTS)
    else:
        result = bucket_orp(records, params, trace_mode=TraceMode.COUNTS)
    write_records(args.output, result.output, args.format, args.payload_width)
    print(f"Permuted {params.n} keys into {args.output} ({result.attempts} attempt(s))")
    print(f"  final loads: min {result.loads.min()}, max {result.loads.max()} of Z={params.Z}")
    return EXIT_OK


def run_trace(args):
    if args.input:
        records = _load(args)
    elif args.n is not None:
        records = as_elements(synthetic_keys(args.n, resolve_seed(args)), args.payload_width)
    else:
        raise ValueError("trace needs an input file or --n")

    if args.algo == "merge":
        trace = merge_sort_baseline(records, disks=args.disks).trace
    elif not len(records):
        trace = None
    else:
        params = _params(args, len(records))
        if args.algo == "bin_assign":
            trace = random_bin_assignment(records, params).trace
        elif args.algo == "orp":
            trace = bucket_orp(records, params).trace
        else:
            trace = bucket_osort(records, params).trace

    text = trace.to_text() if trace is not None else ""
    if args.output:
        with open(args.output, "w", newline="\n") as f:
            f.write(text)
        print(f"Wrote {len(trace) if trace is not None else 0} events to {args.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _bench_report(algo, keys, args, Z, seed):
    n = len(keys)
    if algo == "merge":
        return merge_sort_baseline(keys, disks=args.disks, trace_mode=TraceMode.COUNTS).cost
    if algo == "bitonic":
        return bitonic_sort_baseline(keys, disks=args.disks, trace_mode=TraceMode.COUNTS).cost
    params = _params(args, n, Z, seed)
    if algo == "bucket":
        return bucket_osort(keys, params, trace_mode=TraceMode.COUNTS).cost
    run = random_bin_assignment if algo == "bin_assign" else bucket_orp
    memory = run(keys, params, trace_mode=TraceMode.COUNTS).memory
    report = predict_costs(algo, n, Z, params.client_mode, params.disks, seed)
    return measured_costs(report, memory)


def run_bench(args):
    seed = resolve_seed(args)
    reports = []
    for n in sorted(args.n):
        keys = synthetic_keys(n, seed)
        for Z in sorted(args.z):
            for algo in args.algos:
                if algo in ("merge", "bitonic") and Z != min(args.z):
                    continue  # baselines do not depend on Z
                logger.info("bench %s n=%d Z=%d", algo, n, Z)
                reports.append(_bench_report(algo, keys, args, Z, seed))
    write_csv(cost_frame(reports), args.output)
    if args.output:
        print(f"Wrote {len(reports)} rows to {args.output}")
    return EXIT_OK


def run_overflow(args):
    seed = resolve_seed(args)
    rows = []
    for n in sorted(args.n):
        for Z in sorted(args.z):
            stats = overflow_monte_carlo(n, Z, args.trials, seed, workers=args.workers)
            rows.append({
                "n": n,
                "Z": Z,
                "B": stats.B,
                "trials": stats.trials,
                "any_overflow_rate": stats.any_overflow_rate,
                "max_bucket_rate": stats.max_bucket_rate,
                "final_bucket_rate": stats.final_bucket_rate,
                "bucket_bound": chernoff_bucket_bound(Z),
                "epsilon_bound": epsilon_bound(n, Z).value,
                "seed": seed,
            })
    write_csv(pd.DataFrame(rows, columns=OVERFLOW_COLUMNS), args.output)
    if args.output:
        print(f"Wrote {len(rows)} rows to {args.output}")
    return EXIT_OK


def run_locality(args):
    seed = resolve_seed(args)
    rows = []
    for n in sorted(args.n):
        keys = synthetic_keys(n, seed)
        for Z in sorted(args.z):
            for algo in args.algos:
                if algo == "merge":
                    if Z != min(args.z):
                        continue
                    moves = merge_sort_baseline(keys, args.disks, TraceMode.COUNTS).memory.moves
                    levels = ceil_log2(n)
                else:
                    params = _params(args, n, Z, seed)
                    moves = bucket_osort(keys, params, trace_mode=TraceMode.COUNTS).memory.moves
                    levels = params.levels
                rows.append({"algo": algo, "n": n, "Z": Z, "disks": args.disks,
                             "moves": moves, "levels": levels, "seed": seed})
    write_csv(pd.DataFrame(rows, columns=LOCALITY_COLUMNS), args.output)
    if args.output:
        print(f"Wrote {len(rows)} rows to {args.output}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except Overflow as err:
        print(f"Error: {err}", file=sys.stderr)
        return EXIT_OVERFLOW
    except (ObliviousSortError, ValueError) as err:
        print(f"Error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as err:
        print(f"Error: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
