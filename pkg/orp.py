"""
Bucket oblivious random permutation: random bin assignment, then each final
bucket is shuffled and its dummies dropped while the buckets are emitted in
order into the output array.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from bin_assign import random_bin_assignment
from bitonic import bitonic_sort, striped_bitonic
from config import CONST_CLIENT_BUDGET, DEFAULT_LABEL_WIDTH, DEFAULT_RETRY_ATTEMPTS, MAX_LABEL_WIDTH
from core import LabelWidthTooSmall, Overflow, Params, RoutingEngine, dummies, next_power_of_two
from memory import Memory, Op, TraceMode
from rng import RngStream, StreamPurpose, derive_seed

logger = logging.getLogger(__name__)


@dataclass
class PermutationOutput:
    output: np.ndarray
    loads: np.ndarray
    memory: Memory
    params: Params
    output_region: int
    attempts: int = 1

    @property
    def trace(self):
        return self.memory.trace


def permute_bucket_local(bucket, rng):
    """Uniformly shuffle the reals of a bucket held by the client; dummies are dropped."""
    reals = bucket[bucket["is_real"]]
    return reals[rng.permutation(len(reals))]


def _by_random_label(records):
    return (~records["is_real"]).astype(np.uint8), records["rank"]


def permute_bucket_labels(memory, region, offset, length, rng, label_width=DEFAULT_LABEL_WIDTH):
    """Shuffle the reals of region[offset:offset+length] in place by sorting on random labels.

    Labels are redrawn until the reals' labels are distinct. Reals stay ahead
    of dummies. Returns the number of attempts.
    """
    if not 1 <= label_width <= MAX_LABEL_WIDTH or (1 << label_width) < length * length:
        raise LabelWidthTooSmall(
            f"{label_width}-bit labels are too narrow for buckets of {length} (need 2^w >= Z^2)"
        )
    mask = np.uint64((1 << label_width) - 1)
    slots = offset + np.arange(length, dtype=np.int64)
    window = memory.view(region)[offset:offset + length]
    attempts = 0
    while True:
        attempts += 1
        memory.touch(region, np.tile(np.array([Op.READ, Op.WRITE], dtype=np.uint8), length),
                     np.repeat(slots, 2))
        window["rank"] = rng.next_u64(length) & mask
        bitonic_sort(memory, region, key=_by_random_label, offset=offset, length=length)
        # adjacent-equality scan over the sorted labels
        memory.touch(region, Op.READ, slots, keep=False)
        labels = window["rank"][window["is_real"]]
        if not np.any(labels[1:] == labels[:-1]):
            return attempts
        logger.debug("label collision in bucket at %d, redrawing", offset)


def shuffle_bucket(bucket, rng, label_width=DEFAULT_LABEL_WIDTH):
    """Run permute_bucket_labels on a standalone bucket; returns (reals, attempts)."""
    memory = Memory(budget=CONST_CLIENT_BUDGET, whole_bucket_reads=False, dtype=bucket.dtype)
    region = memory.allocate("bucket", data=bucket)
    attempts = permute_bucket_labels(memory, region, 0, len(bucket), rng, label_width)
    shuffled = memory.view(region)
    return shuffled[shuffled["is_real"]].copy(), attempts


def _output_disk(memory, region):
    return (memory.disk_of(region) + 1) % memory.disks


def _emit_held_buckets(memory, params, output, rng):
    """Read each final bucket whole, shuffle it in the client and write its reals."""
    cursor = 0
    for b in range(params.B):
        bucket = memory.read_bucket(params.levels, b)
        reals = permute_bucket_local(bucket, rng)
        memory.write_range(output, cursor, reals)
        cursor += len(reals)
        memory.release()


def _emit_streamed(memory, region, span, output):
    """Slot-by-slot emission: every slot is read, each real is written out next."""
    data = memory.view(region)[:span]
    real = data["is_real"]
    n = int(np.count_nonzero(real))
    slots = np.arange(span, dtype=np.int64)
    reads_at = slots + np.cumsum(real) - real
    writes_at = reads_at[real] + 1
    total = span + n
    regions = np.full(total, region, dtype=np.int64)
    ops = np.full(total, Op.READ, dtype=np.uint8)
    offsets = np.empty(total, dtype=np.int64)
    keep = np.ones(total, dtype=bool)
    offsets[reads_at] = slots
    keep[reads_at] = real
    regions[writes_at] = output
    ops[writes_at] = Op.WRITE
    offsets[writes_at] = np.arange(n)
    memory.touch(regions, ops, offsets, 1, keep)
    memory.view(output)[:] = data[real]


def _label_scan_events(source, offsets, span, Z, target, k):
    """Read source[:span] in order, copying bucket b to target[b*k:b*k+Z] and
    writing k-Z padding slots after it. Slots outside any bucket are dropped."""
    owner = np.full(span, -1, dtype=np.int64)
    within = np.zeros(span, dtype=np.int64)
    local = np.arange(Z, dtype=np.int64)
    members = (offsets[:, None] + local).ravel()
    owner[members] = np.repeat(np.arange(len(offsets)), Z)
    within[members] = np.tile(local, len(offsets))
    member = owner >= 0
    last = member & (within == Z - 1)
    counts = 1 + member + last * (k - Z)
    starts = np.cumsum(counts) - counts
    total = int(counts.sum())

    regions = np.full(total, target, dtype=np.int64)
    ops = np.full(total, Op.WRITE, dtype=np.uint8)
    event_offsets = np.empty(total, dtype=np.int64)
    keep = np.ones(total, dtype=bool)
    regions[starts] = source
    ops[starts] = Op.READ
    event_offsets[starts] = np.arange(span)
    keep[starts] = member
    event_offsets[starts[member] + 1] = owner[member] * k + within[member]
    if k > Z:
        pad = (starts[last] + 2)[:, None] + np.arange(k - Z)
        event_offsets[pad.ravel()] = (owner[last][:, None] * k + np.arange(Z, k)).ravel()
    return regions, ops, event_offsets, keep


def _permute_striped(memory, params, assignment, rng):
    """Label every slot of every final bucket, then sort all buckets at once.

    Buckets are padded to a power of two and sorted pass by pass over three
    disks. Labels are redrawn for every bucket whenever two reals of one
    bucket collide. Returns the region holding the shuffled buckets and its
    length.
    """
    B, Z, w = params.B, params.Z, params.label_width
    if not 1 <= w <= MAX_LABEL_WIDTH or (1 << w) < Z * Z:
        raise LabelWidthTooSmall(f"{w}-bit labels are too narrow for buckets of {Z} (need 2^w >= Z^2)")
    k = next_power_of_two(Z)
    home = memory.disk_of(assignment.final_region)
    shuffled = memory.allocate("shuffled", B * k, disk=(home + 1) % 3)
    scratch = (memory.allocate("shuffle_low", B * k // 2, disk=(home + 2) % 3),
               memory.allocate("shuffle_high", B * k // 2, disk=home))
    events = _label_scan_events(assignment.final_region, assignment.offsets, assignment.span,
                                Z, shuffled, k)
    mask = np.uint64((1 << w) - 1)
    source = memory.view(assignment.final_region)
    attempts = 0
    while True:
        attempts += 1
        memory.touch(*events[:3], 1, events[3])
        buckets = dummies(B * k, memory.dtype).reshape(B, k)
        buckets[:, :Z] = np.stack([source[o:o + Z] for o in assignment.offsets])
        buckets["rank"] = (rng.next_u64(B * k) & mask).reshape(B, k)
        memory.view(shuffled)[:] = buckets.ravel()
        striped_bitonic(memory, shuffled, scratch, k, B, key=_by_random_label)
        # adjacent-equality scan over the sorted labels
        memory.touch(shuffled, Op.READ, np.arange(B * k), keep=False)
        rows = memory.view(shuffled).reshape(B, k)
        collided = rows["is_real"][:, 1:] & (rows["rank"][:, 1:] == rows["rank"][:, :-1])
        if not collided.any():
            logger.debug("striped bucket permutation done in %d attempts", attempts)
            return shuffled, B * k
        logger.debug("label collision in %d buckets, redrawing", int(collided.any(axis=1).sum()))


def bucket_orp(X, params, rng=None, memory=None, trace_mode=TraceMode.FULL):
    rng = rng or RngStream(params.seed, StreamPurpose.LABELS)
    assignment = random_bin_assignment(X, params, rng, memory, trace_mode)
    memory = assignment.memory
    engine = params.engine

    if engine is RoutingEngine.STRIPED:
        with memory.phase("permutation"):
            shuffled, span = _permute_striped(memory, params, assignment,
                                              rng.spawn(StreamPurpose.BUCKET_LABELS))
        output = memory.allocate("output", params.n, disk=_output_disk(memory, shuffled))
        with memory.phase("emission"):
            _emit_streamed(memory, shuffled, span, output)
    elif engine is RoutingEngine.BITONIC:
        output = memory.allocate("output", params.n, disk=_output_disk(memory, assignment.final_region))
        labels = rng.spawn(StreamPurpose.BUCKET_LABELS)
        with memory.phase("permutation"):
            for b in range(params.B):
                permute_bucket_labels(memory, assignment.final_region, b * params.Z, params.Z,
                                      labels, params.label_width)
        with memory.phase("emission"):
            _emit_streamed(memory, assignment.final_region, assignment.span, output)
    else:
        output = memory.allocate("output", params.n, disk=_output_disk(memory, assignment.final_region))
        with memory.phase("emission"):
            _emit_held_buckets(memory, params, output, rng.spawn(StreamPurpose.PERMUTATION))

    return PermutationOutput(
        output=memory.view(output).copy(),
        loads=assignment.loads,
        memory=memory,
        params=params,
        output_region=output,
    )


def bucket_orp_with_retry(X, params, max_attempts=DEFAULT_RETRY_ATTEMPTS, trace_mode=TraceMode.FULL):
    """bucket_orp, rerun with a fresh seed after each overflow."""
    error = None
    for attempt in range(max_attempts):
        seed = params.seed if attempt == 0 else derive_seed(params.seed, StreamPurpose.RETRY, attempt)
        try:
            result = bucket_orp(X, replace(params, seed=seed), trace_mode=trace_mode)
        except Overflow as err:
            error = err
            logger.warning("attempt %d of %d overflowed (%s); retrying with a fresh seed",
                           attempt + 1, max_attempts, err)
            continue
        result.attempts = attempt + 1
        if attempt:
            logger.info("permutation succeeded after %d retries", attempt)
        return result
    raise error
