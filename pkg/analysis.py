"""
Analytic formulas and statistical oracles for bucket oblivious sorting:
the overflow bound, balls-into-bins Monte Carlo, chi-square helpers, the
access-cost model and locality summaries.
"""

import itertools
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import pandas as pd
from scipy import stats

from bitonic import comparator_count, network_comparators, network_depth, sentinel_accesses
from config import (
    BENCH_COLUMNS,
    CHI_SQUARE_P_VALUE,
    DEFAULT_BUCKET_SIZE,
    DEFAULT_SEED,
    HEADLINE_LOG2_N,
    MONTE_CARLO_BATCH,
    REFERENCE_CONSTANTS,
    STRIPED_MIN_DISKS,
)
from core import (
    ClientMode,
    bucket_count,
    ceil_log2,
    group_sizes,
    log2_exact,
    next_power_of_two,
    route_bucket,
)
from rng import RngStream, StreamPurpose, draw_labels

logger = logging.getLogger(__name__)

PHASES = ("placement", "routing", "permutation", "emission", "distribution", "sort")


# ---------------------------------------------------------------------------
# Overflow bound
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OverflowBound:
    n: int
    Z: int
    B: int
    levels: int
    value: float     # clamped to [0, 1]
    raw: float
    log2_raw: float


def epsilon_bound(n, Z):
    """Union bound B * log2(B) * e^(-Z/6) over every bucket of every level."""
    B = bucket_count(n, Z)
    levels = log2_exact(B)
    if levels == 0:
        return OverflowBound(n, Z, B, 0, 0.0, 0.0, -math.inf)
    log2_raw = math.log2(B) + math.log2(levels) - Z / (6 * math.log(2))
    raw = B * levels * math.exp(-Z / 6)
    return OverflowBound(n, Z, B, levels, min(1.0, raw), raw, log2_raw)


def chernoff_bucket_bound(Z):
    return math.exp(-Z / 6)


def binomial_overflow_tail(n, B, Z):
    """Exact Pr[Bin(n, 1/B) > Z], the overflow chance of one final bucket."""
    return float(stats.binom.sf(Z, n, 1.0 / B))


def choose_bucket_size(n, log2_target=-80):
    """Smallest even Z whose overflow bound is below 2^log2_target."""
    Z = 2
    while epsilon_bound(n, Z).log2_raw >= log2_target:
        Z += 2
    return Z


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class OverflowStats:
    n: int
    Z: int
    B: int
    trials: int
    overflow_runs: int
    bucket_overflows: np.ndarray  # (levels + 1, B) overflow counts
    seed: int = DEFAULT_SEED

    @property
    def any_overflow_rate(self):
        return self.overflow_runs / self.trials

    @property
    def bucket_rates(self):
        return self.bucket_overflows / self.trials

    @property
    def max_bucket_rate(self):
        return float(self.bucket_rates.max())

    @property
    def final_bucket_rate(self):
        return float(self.bucket_rates[-1].mean())


def _overflow_batch(n, Z, trials, seed, index):
    B = bucket_count(n, Z)
    levels = log2_exact(B)
    stream = RngStream(seed, StreamPurpose.TRIAL, index)
    labels = draw_labels(stream, B, trials * n).astype(np.int64).reshape(trials, n)
    bucket = np.broadcast_to(np.repeat(np.arange(B), group_sizes(n, B)), (trials, n)).copy()
    rows = (np.arange(trials, dtype=np.int64) * B)[:, None]
    counts = np.zeros((levels + 1, B), dtype=np.int64)
    overflowed = np.zeros(trials, dtype=bool)
    for i in range(levels):
        bucket = route_bucket(bucket, (labels >> (levels - 1 - i)) & 1, i)
        loads = np.bincount((rows + bucket).ravel(), minlength=trials * B).reshape(trials, B)
        over = loads > Z
        counts[i + 1] += over.sum(axis=0)
        overflowed |= over.any(axis=1)
    return int(overflowed.sum()), counts


def overflow_monte_carlo(n, Z, trials, seed=DEFAULT_SEED, workers=1):
    """Empirical overflow rates from exact level-by-level loads (no routing).

    Batch b always uses trial stream b, so the result does not depend on
    `workers`.
    """
    B = bucket_count(n, Z)
    per_batch = max(1, MONTE_CARLO_BATCH // max(n, 1))
    sizes = [min(per_batch, trials - start) for start in range(0, trials, per_batch)]
    jobs = [(n, Z, size, seed, index) for index, size in enumerate(sizes)]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_overflow_batch, *zip(*jobs)))
    else:
        results = [_overflow_batch(*job) for job in jobs]
    counts = np.zeros((log2_exact(B) + 1, B), dtype=np.int64)
    runs = 0
    for overflow_runs, batch_counts in results:
        runs += overflow_runs
        counts += batch_counts
    logger.info("overflow n=%d Z=%d: %d of %d runs overflowed", n, Z, runs, trials)
    return OverflowStats(n, Z, B, trials, runs, counts, seed)


def loads_oracle(n, B, trials, seed=DEFAULT_SEED):
    """Histogram {loads tuple: frequency} from throwing n balls into B bins."""
    if n == 0:
        return {(0,) * B: 1.0}
    stream = RngStream(seed, StreamPurpose.TRIAL, 0)
    labels = draw_labels(stream, B, trials * n).astype(np.int64).reshape(trials, n)
    rows = (np.arange(trials, dtype=np.int64) * B)[:, None]
    loads = np.bincount((rows + labels).ravel(), minlength=trials * B).reshape(trials, B)
    return load_histogram(loads)


def exact_loads_distribution(n, B):
    """{loads tuple: probability} of n balls thrown into B bins, from the multinomial pmf."""
    tuples = []
    # bars placed among n + B - 1 positions split the balls into B bins
    for bars in itertools.combinations(range(n + B - 1), B - 1):
        edges = (-1,) + bars + (n + B - 1,)
        tuples.append(tuple(edges[b + 1] - edges[b] - 1 for b in range(B)))
    pmf = stats.multinomial.pmf(np.array(tuples), n, np.full(B, 1.0 / B))
    return dict(zip(tuples, (float(p) for p in pmf)))


def load_histogram(loads):
    loads = np.asarray(loads)
    rows, counts = np.unique(loads, axis=0, return_counts=True)
    total = counts.sum()
    return {tuple(int(v) for v in row): c / total for row, c in zip(rows, counts)}


def total_variation(p, q):
    keys = set(p) | set(q)
    return 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys)


# ---------------------------------------------------------------------------
# Chi-square
# ---------------------------------------------------------------------------

def chi_square_critical(df, p=CHI_SQUARE_P_VALUE):
    return float(stats.chi2.isf(p, df))


def chi_square_statistic(observed, expected=None):
    """Statistic against `expected` counts (uniform when omitted)."""
    observed = np.asarray(observed, dtype=float)
    if expected is None:
        expected = np.full_like(observed, observed.sum() / len(observed))
    return float(stats.chisquare(observed, np.asarray(expected, dtype=float)).statistic)


def permutation_counts(orders, k):
    """Counts of each permutation of range(k), in lexicographic order."""
    index = {perm: i for i, perm in enumerate(itertools.permutations(range(k)))}
    counts = np.zeros(len(index), dtype=np.int64)
    for order in orders:
        counts[index[tuple(int(v) for v in order)]] += 1
    return counts


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------

@dataclass
class CostReport:
    algo: str
    n: int
    Z: int
    B: int
    mode: str
    disks: int = 1
    seed: int = DEFAULT_SEED
    predicted: dict = field(default_factory=dict)
    measured: dict = field(default_factory=dict)
    comparisons: int = 0
    predicted_comparisons: Optional[int] = None
    moves: tuple = ()
    reference_constants: dict = field(default_factory=lambda: dict(REFERENCE_CONSTANTS))

    @property
    def predicted_total(self):
        return sum(self.predicted.values())

    @property
    def measured_total(self):
        return sum(self.measured.values())

    @property
    def predicted_routing(self):
        return self.predicted.get("routing", 0)

    @property
    def measured_routing(self):
        return self.measured.get("routing", 0)

    @property
    def total_moves(self):
        return sum(self.moves)

    def reference_cost(self, name):
        """Reference runtime c * n log n of a sorting network that is not built here."""
        return self.reference_constants[name] * self.n * max(1, ceil_log2(self.n))

    def as_row(self):
        return {
            "algo": self.algo,
            "n": self.n,
            "Z": self.Z,
            "mode": self.mode,
            "measured_accesses": self.measured_total,
            "predicted_accesses": self.predicted_total,
            "comparisons": self.comparisons,
            "moves": self.total_moves,
            "disks": self.disks,
            "seed": self.seed,
        }


BASELINES = ("merge", "bitonic")
BUCKET_ALGOS = ("bin_assign", "orp", "bucket")


def merge_sort_accesses(n, disks=1):
    """Merge sort reads and writes every element once per level: 2n per level."""
    return 2 * n * ceil_log2(n)


def distribution_accesses(n, disks=1):
    """Copies dealing home runs onto the tapes before each 3-disk merge from runs of 4 on."""
    if disks < STRIPED_MIN_DISKS:
        return 0
    return 2 * n * max(0, ceil_log2(n) - 2)


def bitonic_baseline_accesses(n):
    m = 1 << ceil_log2(n)
    return 4 * comparator_count(m) - sentinel_accesses(n)


def striped_sort_accesses(k, segments):
    """Split sweep plus comparator sweep, each 2 accesses per slot, for every pass."""
    return 4 * segments * k * network_depth(k)


def _routing_accesses(B, Z, levels, client_mode, disks):
    if client_mode is ClientMode.BUCKET:
        return 2 * B * Z * levels
    pairs = B // 2
    if disks < STRIPED_MIN_DISKS:
        return levels * pairs * (8 * Z + 4 * network_comparators(2 * Z))
    m = next_power_of_two(2 * Z)
    # counting scan, tagging scan with padding, striped sort
    per_level = 2 * Z * pairs + (2 * Z + m) * pairs + striped_sort_accesses(m, pairs)
    # split scan between levels, padding read and dropped
    return levels * per_level + max(levels - 1, 0) * (m + 2 * Z) * pairs


def _permutation_accesses(B, Z, levels):
    """Striped bucket permutation with one labelling attempt."""
    k = next_power_of_two(Z)
    span = (B // 2) * next_power_of_two(2 * Z) if levels else Z
    return span + B * k + striped_sort_accesses(k, B) + B * k


def predict_costs(algo, n, Z=DEFAULT_BUCKET_SIZE, client_mode=ClientMode.BUCKET, disks=1,
                  seed=DEFAULT_SEED):
    """Predicted element accesses per phase.

    Bucket routing costs 2*B*Z per level, which is 4n per level whenever
    B*Z = 2n.
    """
    client_mode = ClientMode(client_mode)
    if algo in BASELINES:
        report = CostReport(algo, n, Z, 1, "baseline", disks, seed)
        if algo == "merge":
            report.predicted["sort"] = merge_sort_accesses(n, disks)
            if distribution_accesses(n, disks):
                report.predicted["distribution"] = distribution_accesses(n, disks)
        else:
            report.predicted["sort"] = bitonic_baseline_accesses(n)
            report.predicted_comparisons = comparator_count(1 << ceil_log2(n))
        return report
    if algo not in BUCKET_ALGOS:
        raise ValueError(f"unknown algorithm {algo!r}")

    B = bucket_count(n, Z)
    levels = log2_exact(B)
    striped = client_mode is ClientMode.CONST and disks >= STRIPED_MIN_DISKS
    report = CostReport(algo, n, Z, B, client_mode.value, disks, seed)
    report.predicted["placement"] = n + B * Z
    report.predicted["routing"] = _routing_accesses(B, Z, levels, client_mode, disks)
    if algo in ("orp", "bucket"):
        if striped:
            report.predicted["permutation"] = _permutation_accesses(B, Z, levels)
            report.predicted["emission"] = B * next_power_of_two(Z) + n
        else:
            if client_mode is ClientMode.CONST:
                report.predicted["permutation"] = B * (3 * Z + 4 * network_comparators(Z))
            report.predicted["emission"] = B * Z + n
    if algo == "bucket":
        report.predicted["sort"] = merge_sort_accesses(n, disks)
        if distribution_accesses(n, disks):
            report.predicted["distribution"] = distribution_accesses(n, disks)
    return report


def measured_costs(report, memory, adjustments=None):
    """Fill `report.measured` from the phases recorded on `memory`."""
    for phase in PHASES:
        if phase in memory.phases:
            report.measured[phase] = memory.phases[phase].accesses
    for phase, delta in (adjustments or {}).items():
        report.measured[phase] = report.measured.get(phase, 0) + delta
    report.comparisons = memory.comparisons
    report.moves = memory.trace.totals.moves
    return report


def const_client_leading_order(n, Z):
    """Leading-order constant-storage bin assignment cost, 2n log2 B log2^2 (2Z)."""
    B = bucket_count(n, Z)
    return 2 * n * log2_exact(B) * ceil_log2(2 * Z) ** 2


def bucket_osort_bound(n):
    return 6 * n * ceil_log2(n)


def extrapolated_ratio(log2_n=HEADLINE_LOG2_N, Z=DEFAULT_BUCKET_SIZE):
    """Model ratio bitonic / bucket oblivious sort at n = 2^log2_n."""
    n = 1 << log2_n
    bitonic = predict_costs("bitonic", n).predicted_total
    bucket = predict_costs("bucket", n, Z).predicted_total
    return bitonic / bucket


def cost_frame(reports):
    rows = [report.as_row() for report in reports]
    return pd.DataFrame(rows, columns=BENCH_COLUMNS)


# ---------------------------------------------------------------------------
# Locality
# ---------------------------------------------------------------------------

class LocalityReport(NamedTuple):
    disks: int
    moves: int
    per_disk: tuple


def locality_report(trace, disks=None):
    """(D, number of head moves) of a recorded run."""
    per_disk = trace.totals.moves
    return LocalityReport(disks or trace.disks, sum(per_disk), per_disk)


def growth_within(measured_ratio, expected_ratio, tolerance):
    return abs(measured_ratio / expected_ratio - 1) <= tolerance
