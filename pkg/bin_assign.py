"""
Oblivious random bin assignment.

Every element gets a uniformly random destination bucket, then log2 B levels
of MergeSplit route the elements through a butterfly network of buckets
padded with dummies, so which buckets are touched never depends on the data.
"""

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from bitonic import bitonic_sort, striped_bitonic
from config import CONST_CLIENT_BUDGET
from core import (
    InvalidParams,
    Overflow,
    Params,
    RoutingEngine,
    as_elements,
    bucket_loads,
    dummies,
    label_bit,
    merge_split_indices,
    next_power_of_two,
)
from memory import Memory, Op, TraceMode
from rng import RngStream, StreamPurpose, draw_labels

logger = logging.getLogger(__name__)

_READ_WRITE = np.array([Op.READ, Op.WRITE], dtype=np.uint8)


@dataclass
class AssignmentResult:
    final: np.ndarray   # (B, Z) buckets of the last level
    loads: np.ndarray
    memory: Memory
    params: Params
    final_region: int
    levels: list = field(default_factory=list)  # snapshots when keep_levels is set
    offsets: Optional[np.ndarray] = None        # start of each final bucket in final_region
    span: int = 0                               # slots a scan of the final buckets covers

    @property
    def trace(self):
        return self.memory.trace


# ---------------------------------------------------------------------------
# MergeSplit
# ---------------------------------------------------------------------------

def merge_split(a0, a1, i, levels, outputs=(0, 1)):
    """Route the reals of two buckets by label bit i into two fresh buckets.

    Reals keep their order (a0 before a1, slot order) and precede dummies.
    `outputs` names the output buckets for Overflow reporting.
    """
    capacity = len(a0)
    both = np.concatenate([a0, a1])
    real = both["is_real"]
    bit = label_bit(both["label"], i, levels)
    result = []
    for side, bucket in zip((0, 1), outputs):
        chosen = both[real & (bit == side)]
        if len(chosen) > capacity:
            raise Overflow(i + 1, bucket, len(chosen), capacity)
        out = dummies(capacity, both.dtype)
        out[:len(chosen)] = chosen
        result.append(out)
    return result[0], result[1]


def merge_split_key(i, levels):
    def key(records):
        return (
            label_bit(records["label"], i, levels),
            (~records["is_real"]).astype(np.uint8),
            records["rank"],
        )
    return key


def _merge_split_streamed(memory, source, slots, target, target_offset, i, levels, outputs):
    capacity = len(slots) // 2
    pair_slots = np.arange(2 * capacity, dtype=np.int64)

    # counting scan, stamping each slot with its source position
    memory.touch(source, np.tile(_READ_WRITE, 2 * capacity), np.repeat(slots, 2))
    data = memory.view(source)
    pair = data[slots]
    pair["rank"] = pair_slots
    data[slots] = pair
    real = pair["is_real"]
    bit = label_bit(pair["label"], i, levels)
    ones = int(np.count_nonzero(real & (bit == 1)))
    zeros = int(np.count_nonzero(real)) - ones
    if zeros > capacity:
        raise Overflow(i + 1, outputs[0], zeros, capacity)
    if ones > capacity:
        raise Overflow(i + 1, outputs[1], ones, capacity)

    # tagging scan: the first Z - c0 dummies go left, the rest right
    dest = target_offset + pair_slots
    regions = np.tile(np.array([source, target], dtype=np.int64), 2 * capacity)
    memory.touch(regions, np.tile(_READ_WRITE, 2 * capacity), np.stack([slots, dest], axis=1).ravel())
    dummy = ~real
    right = dummy & (np.cumsum(dummy) > capacity - zeros)
    tag = np.uint64(1) << np.uint64(levels - 1 - i)
    pair["label"][dummy] = np.where(right[dummy], tag, np.uint64(0))
    memory.view(target)[dest] = pair

    bitonic_sort(memory, target, key=merge_split_key(i, levels), offset=target_offset,
                 length=2 * capacity)


def merge_split_bitonic(memory, i, j, levels):
    """Constant-storage MergeSplit of pair j at level i, entirely through memory.

    Output buckets 2j and 2j+1 are adjacent, so the tagged pair is written to
    their 2Z slots and sorted there.
    """
    grid = memory.grid
    Z = grid.capacity
    in0, in1, out0, out1 = merge_split_indices(i, j, grid.buckets)
    local = np.arange(Z, dtype=np.int64)
    slots = np.concatenate([in0 * Z + local, in1 * Z + local])
    _merge_split_streamed(memory, memory.level_region(i), slots, memory.level_region(i + 1),
                          out0 * Z, i, levels, (out0, out1))


def merge_split_bitonic_pair(a0, a1, i, levels, budget=None):
    """Standalone constant-storage MergeSplit on two buckets; returns (A'0, A'1, memory)."""
    Z = len(a0)
    memory = Memory(budget=budget or CONST_CLIENT_BUDGET, whole_bucket_reads=False, dtype=a0.dtype)
    source = memory.allocate("pair", data=np.concatenate([a0, a1]))
    target = memory.allocate("split", 2 * Z)
    _merge_split_streamed(memory, source, np.arange(2 * Z, dtype=np.int64), target, 0, i,
                          levels, (0, 1))
    out = memory.view(target)
    return out[:Z].copy(), out[Z:].copy(), memory


# ---------------------------------------------------------------------------
# Placement of groups into level 0
# ---------------------------------------------------------------------------

def _group_offsets(params):
    sizes = np.asarray(params.groups, dtype=np.int64)
    return np.concatenate([[0], np.cumsum(sizes)[:-1]]), sizes


def _padded_group(memory, source, offset, size, labels, Z):
    group = memory.view(source)[offset:offset + size].copy()
    group["label"] = labels[offset:offset + size]
    group["rank"] = 0
    bucket = dummies(Z, memory.dtype)
    bucket[:size] = group
    return bucket


def _place_buckets(memory, params, source, labels):
    starts, sizes = _group_offsets(params)
    for g, (offset, size) in enumerate(zip(starts, sizes)):
        if size:
            memory.read_range(source, offset, size)
        memory.write_bucket(0, g, _padded_group(memory, source, offset, size, labels, params.Z))
        memory.release()


def _place_slots(memory, params, source, labels, targets):
    """Copy group g slot by slot into targets[g] = (region, offset), padding to Z."""
    Z = params.Z
    starts, sizes = _group_offsets(params)
    for g, (offset, size) in enumerate(zip(starts, sizes)):
        region, base = targets[g]
        copied = np.stack([offset + np.arange(size), base + np.arange(size)], axis=1).ravel()
        regions = np.concatenate([np.tile([source, region], size), np.full(Z - size, region)])
        ops = np.concatenate([np.tile(_READ_WRITE, size), np.full(Z - size, Op.WRITE)])
        offsets = np.concatenate([copied, base + np.arange(size, Z)])
        memory.touch(regions, ops, offsets)
        memory.view(region)[base:base + Z] = _padded_group(memory, source, offset, size, labels, Z)


# ---------------------------------------------------------------------------
# Routing engines
# ---------------------------------------------------------------------------

def _route_buckets(memory, params):
    L, B = params.levels, params.B
    for i in range(L):
        for j in range(B // 2):
            in0, in1, out0, out1 = merge_split_indices(i, j, B)
            a0 = memory.read_bucket(i, in0)
            a1 = memory.read_bucket(i, in1)
            o0, o1 = merge_split(a0, a1, i, L, outputs=(out0, out1))
            memory.write_bucket(i + 1, out0, o0)
            memory.write_bucket(i + 1, out1, o1)
        logger.debug("level %d of %d routed", i + 1, L)


def _route_bitonic(memory, params):
    L, B = params.levels, params.B
    for i in range(L):
        for j in range(B // 2):
            merge_split_bitonic(memory, i, j, L)
        logger.debug("level %d of %d routed", i + 1, L)


def _pair_position(buckets, i):
    """Where a level-i bucket sits in the pair-ordered halves read by level i."""
    within = buckets & ((1 << (i + 1)) - 1)
    position = ((buckets >> (i + 1)) << i) | (within & ((1 << i) - 1))
    return position, within >> i


class StripedRegions(NamedTuple):
    halves: tuple   # first and second input bucket of every pair, disks 0 and 1
    pairs: int      # tagged pairs padded to a power of two, disk 2
    scratch: tuple  # split halves of the sorting network, disks 0 and 1
    segment: int


def _striped_regions(memory, params):
    pairs = max(params.B // 2, 1)
    segment = next_power_of_two(2 * params.Z)
    return StripedRegions(
        halves=(memory.allocate("level_low", pairs * params.Z, disk=0),
                memory.allocate("level_high", pairs * params.Z, disk=1)),
        pairs=memory.allocate("pairs", pairs * segment, disk=2),
        scratch=(memory.allocate("network_low", pairs * segment // 2, disk=0),
                 memory.allocate("network_high", pairs * segment // 2, disk=1)),
        segment=segment,
    )


def _count_scan(memory, regions, params, i):
    """Read every pair once, counting reals per output side; nothing is written."""
    L, B, Z = params.levels, params.B, params.Z
    pairs = B // 2
    low, high = regions.halves
    local = np.tile(np.arange(Z, dtype=np.int64), 2)
    j = np.arange(pairs, dtype=np.int64)[:, None]
    memory.touch(np.tile(np.repeat([low, high], Z), pairs), Op.READ,
                 (j * Z + local).ravel(), keep=False)
    tagged = np.concatenate([memory.view(low)[:pairs * Z].reshape(pairs, Z),
                             memory.view(high)[:pairs * Z].reshape(pairs, Z)], axis=1)
    real = tagged["is_real"]
    bit = label_bit(tagged["label"], i, L)
    ones = np.count_nonzero(real & (bit == 1), axis=1)
    zeros = np.count_nonzero(real, axis=1) - ones
    over = np.flatnonzero((zeros > Z) | (ones > Z))
    if len(over):
        first = int(over[0])
        if zeros[first] > Z:
            raise Overflow(i + 1, 2 * first, int(zeros[first]), Z)
        raise Overflow(i + 1, 2 * first + 1, int(ones[first]), Z)
    return tagged, zeros


def _tag_scan(memory, regions, params, i, tagged, zeros):
    """Copy every pair into its padded segment, tagging dummies and stamping source slots."""
    L, B, Z = params.levels, params.B, params.Z
    pairs, m = B // 2, regions.segment
    low, high = regions.halves
    both = np.arange(2 * Z, dtype=np.int64)
    copy_regions = np.stack([np.repeat([low, high], Z), np.full(2 * Z, regions.pairs)], axis=1).ravel()
    copy_offsets = np.stack([both % Z, both], axis=1).ravel()
    copy_strides = np.tile(np.array([Z, m], dtype=np.int64), 2 * Z)
    template_regions = np.concatenate([copy_regions, np.full(m - 2 * Z, regions.pairs)])
    template_ops = np.concatenate([np.tile(_READ_WRITE, 2 * Z), np.full(m - 2 * Z, Op.WRITE)])
    template_offsets = np.concatenate([copy_offsets, np.arange(2 * Z, m)])
    template_strides = np.concatenate([copy_strides, np.full(m - 2 * Z, m)])
    j = np.arange(pairs, dtype=np.int64)[:, None]
    memory.touch(np.tile(template_regions, pairs), np.tile(template_ops, pairs),
                 (template_offsets + j * template_strides).ravel())

    dummy = ~tagged["is_real"]
    right = dummy & (np.cumsum(dummy, axis=1) > (Z - zeros)[:, None])
    tag = np.uint64(1) << np.uint64(L - 1 - i)
    tagged["label"][dummy] = np.where(right[dummy], tag, np.uint64(0))
    tagged["rank"] = both
    segments = dummies(pairs * m, memory.dtype).reshape(pairs, m)
    segments[:, :2 * Z] = tagged
    # padding sorts after both sides
    segments["label"][:, 2 * Z:] = tag
    segments["rank"][:, 2 * Z:] = np.arange(2 * Z, m)
    memory.view(regions.pairs)[:pairs * m] = segments.ravel()


def _split_scan(memory, regions, params, i):
    """Deal the level-i outputs into the pair-ordered halves of level i+1."""
    B, Z = params.B, params.Z
    pairs, m = B // 2, regions.segment
    low, high = regions.halves
    both = np.arange(2 * Z, dtype=np.int64)
    j = np.arange(pairs, dtype=np.int64)[:, None]
    buckets = 2 * j + both // Z
    position, side = _pair_position(buckets, i + 1)

    width = 4 * Z + m - 2 * Z
    event_regions = np.empty((pairs, width), dtype=np.int64)
    ops = np.empty((pairs, width), dtype=np.uint8)
    offsets = np.empty((pairs, width), dtype=np.int64)
    keep = np.ones((pairs, width), dtype=bool)
    event_regions[:, 0:4 * Z:2], ops[:, 0:4 * Z:2] = regions.pairs, Op.READ
    offsets[:, 0:4 * Z:2] = j * m + both
    event_regions[:, 1:4 * Z:2] = np.where(side == 0, low, high)
    ops[:, 1:4 * Z:2] = Op.WRITE
    offsets[:, 1:4 * Z:2] = position * Z + both % Z
    # padding is read and dropped so the pairs head never skips
    event_regions[:, 4 * Z:], ops[:, 4 * Z:] = regions.pairs, Op.READ
    offsets[:, 4 * Z:] = j * m + np.arange(2 * Z, m)
    keep[:, 4 * Z:] = False
    memory.touch(event_regions.ravel(), ops.ravel(), offsets.ravel(), 1, keep.ravel())

    routed = _routed_buckets(memory, regions, params)
    position, side = _pair_position(np.arange(B, dtype=np.int64), i + 1)
    for part, region in ((0, low), (1, high)):
        chosen = side == part
        memory.view(region)[:pairs * Z].reshape(pairs, Z)[position[chosen]] = routed[chosen]


def _routed_buckets(memory, regions, params):
    pairs, m, Z = params.B // 2, regions.segment, params.Z
    return memory.view(regions.pairs)[:pairs * m].reshape(pairs, m)[:, :2 * Z].reshape(params.B, Z).copy()


def _route_striped(memory, params, regions, keep_levels):
    """Constant-storage routing of whole levels, every sweep sequential on its disk.

    Each level is a counting scan over the pair-ordered halves, a tagging
    scan into padded segments, one striped bitonic sort of all segments and,
    before the next level, a split scan back into pair-ordered halves.
    """
    L = params.levels
    snapshots = []
    for i in range(L):
        tagged, zeros = _count_scan(memory, regions, params, i)
        _tag_scan(memory, regions, params, i, tagged, zeros)
        striped_bitonic(memory, regions.pairs, regions.scratch, regions.segment, params.B // 2,
                        key=merge_split_key(i, L))
        if keep_levels:
            snapshots.append(_routed_buckets(memory, regions, params))
        if i < L - 1:
            _split_scan(memory, regions, params, i)
        logger.debug("level %d of %d routed (striped)", i + 1, L)
    return snapshots


def final_layout(params, regions):
    """(region, bucket offsets, slots spanned) of the last level of a striped run."""
    B, Z = params.B, params.Z
    if params.levels == 0:
        return regions.halves[0], np.zeros(1, dtype=np.int64), Z
    b = np.arange(B, dtype=np.int64)
    return regions.pairs, (b // 2) * regions.segment + (b % 2) * Z, (B // 2) * regions.segment


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def random_bin_assignment(X, params, rng=None, memory=None, trace_mode=TraceMode.FULL,
                          keep_levels=False):
    X = as_elements(X, params.payload_width)
    if len(X) != params.n:
        raise InvalidParams(f"params derived for n={params.n}, got {len(X)} elements")
    rng = rng or RngStream(params.seed, StreamPurpose.LABELS)
    memory = memory or Memory.for_params(params, trace_mode)
    engine = params.engine
    labels = draw_labels(rng, params.B, params.n)
    B, Z = params.B, params.Z

    if engine is RoutingEngine.STRIPED:
        if memory.disks < 3:
            raise InvalidParams("striped routing needs three disks")
        regions = _striped_regions(memory, params)
        source = memory.allocate("input", disk=2, data=X)
        position, side = _pair_position(np.arange(B, dtype=np.int64), 0)
        targets = [(regions.halves[s], p * Z) for p, s in zip(position, side)]
        with memory.phase("placement"):
            _place_slots(memory, params, source, labels, targets)
        snapshots = []
        if keep_levels:
            snapshots.append(np.stack([memory.view(r)[o:o + Z] for r, o in targets]))
        with memory.phase("routing"):
            snapshots += _route_striped(memory, params, regions, keep_levels)
        final_region, offsets, span = final_layout(params, regions)
        final = np.stack([memory.view(final_region)[o:o + Z] for o in offsets])
    else:
        source = memory.allocate("input", disk=params.disks - 1, data=X)
        with memory.phase("placement"):
            if engine is RoutingEngine.BUCKET:
                _place_buckets(memory, params, source, labels)
            else:
                level0 = memory.level_region(0)
                _place_slots(memory, params, source, labels, [(level0, g * Z) for g in range(B)])
        with memory.phase("routing"):
            if engine is RoutingEngine.BUCKET:
                _route_buckets(memory, params)
            else:
                _route_bitonic(memory, params)
        final_region = memory.level_region(params.levels)
        offsets, span = np.arange(B, dtype=np.int64) * Z, B * Z
        final = memory.level_view(params.levels).copy()
        snapshots = [memory.level_view(i).copy() for i in range(params.levels + 1)] if keep_levels else []

    return AssignmentResult(
        final=final,
        loads=bucket_loads(final),
        memory=memory,
        params=params,
        final_region=final_region,
        levels=snapshots,
        offsets=offsets,
        span=span,
    )
