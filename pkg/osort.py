"""
Bucket oblivious sort and the baselines it is measured against.

Once the input is randomly permuted, any comparison sort leaks nothing
beyond the permuted ranks, so a plain (traced) merge sort finishes the job.
"""

import logging
from dataclasses import dataclass

import numpy as np

from analysis import measured_costs, predict_costs
from bitonic import bitonic_sort, sentinel_accesses
from config import STRIPED_MIN_DISKS
from core import as_elements, ceil_log2, dummies
from memory import Memory, Op, TraceMode, trace_equal
from orp import bucket_orp

logger = logging.getLogger(__name__)

# events buffered before they are handed to memory
_FLUSH_EVENTS = 1 << 20


@dataclass
class SortResult:
    output: np.ndarray
    cost: object  # analysis.CostReport
    memory: Memory

    @property
    def trace(self):
        return self.memory.trace


class _EventBuffer:
    """Collects per-element accesses of many merges and records them in order."""

    def __init__(self, memory):
        self.memory = memory
        self.regions = []
        self.ops = []
        self.offsets = []
        self.pending = 0

    def add(self, regions, ops, offsets):
        self.regions.append(regions)
        self.ops.append(ops)
        self.offsets.append(offsets)
        self.pending += len(offsets)
        if self.pending >= _FLUSH_EVENTS:
            self.flush()

    def copy(self, src, src_offsets, dst, dst_offsets):
        count = len(src_offsets)
        self.add(
            np.tile(np.array([src, dst], dtype=np.int64), count),
            np.tile(np.array([Op.READ, Op.WRITE], dtype=np.uint8), count),
            np.stack([src_offsets, dst_offsets], axis=1).ravel(),
        )

    def flush(self):
        if self.pending:
            self.memory.touch(np.concatenate(self.regions), np.concatenate(self.ops),
                              np.concatenate(self.offsets))
        self.regions, self.ops, self.offsets = [], [], []
        self.pending = 0


def _merge(buffer, left, right, dst):
    """Merge two sorted runs, each given as (region, offset, length), into dst.

    Accesses: the head of each run is read, then every output write is
    followed by a read of the next element from the run it came from.
    """
    memory = buffer.memory
    (l_region, l_off, l_len), (r_region, r_off, r_len), (d_region, d_off) = left, right, dst
    block = np.concatenate([memory.view(l_region)[l_off:l_off + l_len],
                            memory.view(r_region)[r_off:r_off + r_len]])
    order = np.argsort(block["sort_key"], kind="stable")
    size = l_len + r_len
    memory.view(d_region)[d_off:d_off + size] = block[order]

    from_right = order >= l_len
    within = order - np.where(from_right, l_len, 0)
    has_next = within + 1 < np.where(from_right, r_len, l_len)
    regions = np.empty((size, 2), dtype=np.int64)
    ops = np.empty((size, 2), dtype=np.uint8)
    offsets = np.empty((size, 2), dtype=np.int64)
    regions[:, 0], ops[:, 0], offsets[:, 0] = d_region, Op.WRITE, d_off + np.arange(size)
    regions[:, 1] = np.where(from_right, r_region, l_region)
    ops[:, 1] = Op.READ
    offsets[:, 1] = np.where(from_right, r_off, l_off) + within + 1
    keep = np.ones((size, 2), dtype=bool)
    keep[:, 1] = has_next
    buffer.add(np.concatenate([[l_region, r_region], regions[keep]]),
               np.concatenate([[Op.READ, Op.READ], ops[keep]]).astype(np.uint8),
               np.concatenate([[l_off, r_off], offsets[keep]]))

    # a comparison is made for every output while both runs are non-empty
    last_left = np.flatnonzero(~from_right)[-1]
    last_right = np.flatnonzero(from_right)[-1]
    memory.count_comparisons(min(last_left, last_right) + 1)


def _ping_pong_merge_sort(memory, region, n):
    home_disk = memory.disk_of(region)
    aux = memory.allocate("merge_aux", n, disk=(home_disk + 1) % memory.disks)
    arrays = (region, aux)
    # pick the top target so the deepest leaves already sit in the home array
    top = ceil_log2(n) % 2
    buffer = _EventBuffer(memory)

    def visit(lo, hi, depth):
        target = (top + depth) % 2
        if hi - lo == 1:
            if target:
                buffer.copy(region, np.array([lo]), aux, np.array([lo]))
                memory.view(aux)[lo] = memory.view(region)[lo]
            return
        mid = (lo + hi) // 2
        visit(lo, mid, depth + 1)
        visit(mid, hi, depth + 1)
        src = arrays[1 - target]
        _merge(buffer, (src, lo, mid - lo), (src, mid, hi - mid), (arrays[target], lo))

    visit(0, n, 0)
    buffer.flush()
    return arrays[top]


def _merge_neighbours(memory, region, n, tapes):
    """Merge slots (2k, 2k+1) of region and deal the merged pairs alternately onto the tapes."""
    pairs = n // 2
    k = np.arange(pairs, dtype=np.int64)
    tape_off = (k // 2) * 2
    dst = np.where(k % 2, tapes[1], tapes[0])
    regions = np.stack([np.full(pairs, region), np.full(pairs, region), dst, dst], axis=1)
    ops = np.tile(np.array([Op.READ, Op.READ, Op.WRITE, Op.WRITE], dtype=np.uint8), pairs)
    offsets = np.stack([2 * k, 2 * k + 1, tape_off, tape_off + 1], axis=1)
    home = memory.view(region)[:n]
    left, right = home[0:2 * pairs:2], home[1:2 * pairs:2]
    swap = right["sort_key"] < left["sort_key"]
    merged = np.stack([left, right], axis=1)
    merged[swap] = merged[swap][:, ::-1]
    if n % 2:
        # the odd slot out is copied to the next tape in turn
        last_tape = tapes[pairs % 2]
        regions = np.concatenate([regions.ravel(), [region, last_tape]])
        ops = np.concatenate([ops, [Op.READ, Op.WRITE]]).astype(np.uint8)
        offsets = np.concatenate([offsets.ravel(), [n - 1, (pairs // 2) * 2]])
        memory.view(last_tape)[(pairs // 2) * 2] = home[n - 1]
    memory.touch(np.ravel(regions), ops, np.ravel(offsets))
    for t in (0, 1):
        chosen = k % 2 == t
        spots = (tape_off[chosen][:, None] + np.arange(2)).ravel()
        memory.view(tapes[t])[spots] = merged[chosen].ravel()
    memory.count_comparisons(pairs)


def _tape_merge_sort(memory, region, n):
    """Bottom-up merge over three disks with every sweep sequential.

    The first merge reads neighbouring slots of the home array and deals the
    merged pairs alternately onto two tapes; every later merge reads one run
    from each tape and writes home. From runs of 4 on, the home runs are first
    dealt back onto the tapes, and that copy is reported as the distribution
    phase rather than as sorting.
    """
    home_disk = memory.disk_of(region)
    tape_disks = [d for d in range(memory.disks) if d != home_disk][:2]
    tapes = [memory.allocate(f"tape{t}", n, disk=d) for t, d in enumerate(tape_disks)]
    buffer = _EventBuffer(memory)
    positions = np.arange(n, dtype=np.int64)
    with memory.phase("sort"):
        _merge_neighbours(memory, region, n, tapes)
    if n <= 2:
        return tapes[0]
    run = 2
    while run < n:
        if run > 2:
            with memory.phase("distribution"):
                # run k goes to tape k % 2
                k = positions // run
                tape_of = k % 2
                tape_pos = (k // 2) * run + positions % run
                regions = np.stack([np.full(n, region), np.where(tape_of, tapes[1], tapes[0])], axis=1)
                ops = np.tile(np.array([Op.READ, Op.WRITE], dtype=np.uint8), n)
                buffer.add(regions.ravel(), ops, np.stack([positions, tape_pos], axis=1).ravel())
                buffer.flush()
                home = memory.view(region)[:n]
                for t in (0, 1):
                    chosen = tape_of == t
                    memory.view(tapes[t])[tape_pos[chosen]] = home[chosen]

        with memory.phase("sort"):
            # merge run pairs back into the home array
            runs = -(-n // run)
            for pair in range(0, runs, 2):
                start = pair * run
                tape_off = (pair // 2) * run
                l_len = min(run, n - start)
                r_len = min(run, n - start - l_len)
                if r_len == 0:
                    src = tape_off + np.arange(l_len)
                    buffer.copy(tapes[0], src, region, start + np.arange(l_len))
                    memory.view(region)[start:start + l_len] = memory.view(tapes[0])[src]
                    continue
                _merge(buffer, (tapes[0], tape_off, l_len), (tapes[1], tape_off, r_len), (region, start))
            buffer.flush()
        logger.debug("tape merge pass with runs of %d done", run)
        run *= 2
    return region


def merge_sort(memory, region, n=None):
    """Traced merge sort of region[:n] by sort_key; returns the region holding the result.

    On three or more disks a tape merge is used; otherwise a top-down merge
    alternating with an auxiliary array. Accesses land in the sort phase
    (and, for the tape merge, the distribution phase).
    """
    n = memory.length_of(region) if n is None else n
    if n <= 1:
        return region
    if memory.disks >= STRIPED_MIN_DISKS:
        return _tape_merge_sort(memory, region, n)
    with memory.phase("sort"):
        return _ping_pong_merge_sort(memory, region, n)


def merge_sort_baseline(X, disks=1, trace_mode=TraceMode.FULL):
    X = as_elements(X)
    n = len(X)
    memory = Memory(disks, budget=None, dtype=X.dtype, trace_mode=trace_mode)
    region = memory.allocate("input", disk=0, data=X)
    final = merge_sort(memory, region, n)
    report = measured_costs(predict_costs("merge", n, disks=disks), memory)
    return SortResult(memory.view(final)[:n].copy(), report, memory)


def bitonic_sort_baseline(X, disks=1, trace_mode=TraceMode.FULL):
    """Whole-array bitonic sort, padded with dummies (which sort as +inf)."""
    X = as_elements(X)
    n = len(X)
    m = 1 << ceil_log2(n)
    padded = dummies(m, X.dtype)
    padded[:n] = X
    memory = Memory(disks, budget=None, dtype=X.dtype, trace_mode=trace_mode)
    region = memory.allocate("input", disk=0, data=padded)
    with memory.phase("sort"):
        if n:
            bitonic_sort(memory, region)
    report = measured_costs(predict_costs("bitonic", n, disks=disks), memory,
                            adjustments={"sort": -sentinel_accesses(n)})
    return SortResult(memory.view(region)[:n].copy(), report, memory)


def bucket_osort(X, params, rng=None, trace_mode=TraceMode.FULL):
    permuted = bucket_orp(X, params, rng, trace_mode=trace_mode)
    memory = permuted.memory
    final = merge_sort(memory, permuted.output_region, params.n)
    report = predict_costs("bucket", params.n, params.Z, params.client_mode, params.disks, params.seed)
    measured_costs(report, memory)
    logger.info("bucket osort n=%d Z=%d: %d accesses (%d predicted), %d moves",
                params.n, params.Z, report.measured_total, report.predicted_total, memory.moves)
    return SortResult(memory.view(final)[:params.n].copy(), report, memory)


def trace_rank_isomorphism_check(x, y, permutation=None):
    """Compare merge-sort traces of x and y after applying the same permutation."""
    x = np.asarray(x, dtype=np.uint64)
    y = np.asarray(y, dtype=np.uint64)
    if permutation is not None:
        x, y = x[permutation], y[permutation]
    first = merge_sort_baseline(x)
    second = merge_sort_baseline(y)
    return trace_equal(first.trace, second.trace)
