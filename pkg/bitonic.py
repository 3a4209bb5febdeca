"""
Bitonic sorting network: schedules, traced execution and striped execution
over many equal segments.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from core import InvalidLength, is_power_of_two, log2_exact
from memory import Op

logger = logging.getLogger(__name__)

# per comparator: read low, read high, write low, write high
_COMPARATOR_OPS = np.array([Op.READ, Op.READ, Op.WRITE, Op.WRITE], dtype=np.uint8)


class Pass(NamedTuple):
    stride: int
    low: np.ndarray
    high: np.ndarray
    ascending: np.ndarray


@dataclass(frozen=True)
class ComparatorSchedule:
    length: int
    passes: tuple

    @property
    def comparators(self):
        return sum(len(p.low) for p in self.passes)

    @property
    def depth(self):
        return len(self.passes)


def comparator_count(m):
    d = log2_exact(m)
    return m * d * (d + 1) // 4


def network_depth(m):
    d = log2_exact(m)
    return d * (d + 1) // 2


def _frozen(array):
    array.setflags(write=False)
    return array


@lru_cache(maxsize=64)
def bitonic_schedule(m):
    if not is_power_of_two(m):
        raise InvalidLength(f"bitonic network length must be a power of two, got {m}")
    slots = np.arange(m, dtype=np.int64)
    passes = []
    size = 2
    while size <= m:
        stride = size // 2
        while stride >= 1:
            partner = slots ^ stride
            low = slots[partner > slots]
            high = low ^ stride
            # blocks of `size` alternate direction; the last merge is ascending
            ascending = (low & size) == 0
            passes.append(Pass(stride, _frozen(low), _frozen(high), _frozen(ascending)))
            stride //= 2
        size *= 2
    return ComparatorSchedule(m, tuple(passes))


@lru_cache(maxsize=64)
def truncated_schedule(length):
    """Network for any length: the all-ascending bitonic variant on the next
    power of two, minus every comparator that reaches past `length`.

    The missing slots behave as +inf sentinels parked at the end. In this
    variant a maximum never leaves the high end, so the dropped comparators
    would never have swapped.
    """
    m = 1 << max(0, (int(length) - 1).bit_length())
    slots = np.arange(m, dtype=np.int64)
    passes = []

    def add(stride, low, high):
        kept = high < length
        if kept.any():
            low, high = low[kept], high[kept]
            passes.append(Pass(stride, _frozen(low), _frozen(high),
                               _frozen(np.ones(len(low), dtype=bool))))

    size = 2
    while size <= m:
        # first pass mirrors each block of `size`, the rest are half-cleaners
        low = slots[(slots & (size // 2)) == 0]
        add(size // 2, low, low ^ (size - 1))
        stride = size // 4
        while stride >= 1:
            low = slots[(slots & stride) == 0]
            add(stride, low, low ^ stride)
            stride //= 2
        size *= 2
    return ComparatorSchedule(int(length), tuple(passes))


def sorting_schedule(length):
    if is_power_of_two(length):
        return bitonic_schedule(length)
    return truncated_schedule(length)


def network_comparators(length):
    """Comparators bitonic_sort runs on `length` slots."""
    return sorting_schedule(length).comparators


def by_sort_key(records):
    """Dummies after reals, reals by sort key."""
    return (~records["is_real"]).astype(np.uint8), records["sort_key"]


def lex_greater(a, b):
    greater = np.zeros(np.shape(a[0]), dtype=bool)
    decided = np.zeros(np.shape(a[0]), dtype=bool)
    for left, right in zip(a, b):
        greater |= ~decided & (left > right)
        decided |= left != right
    return greater


def compare_exchange(records, low, high, ascending, key):
    """Apply one layer of comparators in place; equal keys never swap."""
    first = records[low]
    second = records[high]
    k_first, k_second = key(first), key(second)
    swap = np.where(ascending, lex_greater(k_first, k_second), lex_greater(k_second, k_first))
    records[low[swap]] = second[swap]
    records[high[swap]] = first[swap]


def apply_network(values, m=None):
    """Run the network over rows of plain values (no memory involved)."""
    values = np.array(values, copy=True)
    rows = values.reshape(-1, values.shape[-1])
    schedule = sorting_schedule(m or rows.shape[-1])
    for p in schedule.passes:
        first = rows[:, p.low]
        second = rows[:, p.high]
        swap = np.where(p.ascending, first > second, first < second)
        rows[:, p.low] = np.where(swap, second, first)
        rows[:, p.high] = np.where(swap, first, second)
    return rows.reshape(values.shape)


def bitonic_sort(memory, region, key=by_sort_key, offset=0, length=None):
    """Sort region[offset:offset+length] in place with per-slot streaming accesses.

    Lengths that are not a power of two run the truncated network.
    """
    if length is None:
        length = memory.length_of(region) - offset
    schedule = sorting_schedule(length)
    window = memory.view(region)[offset:offset + length]
    for p in schedule.passes:
        slots = np.stack([p.low, p.high, p.low, p.high], axis=1).ravel() + offset
        memory.touch(region, np.tile(_COMPARATOR_OPS, len(p.low)), slots)
        compare_exchange(window, p.low, p.high, p.ascending, key)
        memory.count_comparisons(len(p.low))
    return schedule


def concurrent_bitonic(memory, source, target, k, segments=None, key=by_sort_key):
    """Sort `segments` consecutive k-slot segments pass by pass.

    Each pass sweeps every segment once, reading from one array and writing
    to the other, so `source` and `target` should sit on different disks.
    Returns the region holding the sorted data.
    """
    if segments is None:
        segments = memory.length_of(source) // k
    schedule = bitonic_schedule(k)
    span = segments * k
    starts = np.arange(segments, dtype=np.int64) * k
    offsets = np.repeat(starts, 2)
    ops = np.tile(np.array([Op.READ, Op.WRITE], dtype=np.uint8), segments)
    src, dst = source, target
    for p in schedule.passes:
        regions = np.tile(np.array([src, dst], dtype=np.int64), segments)
        memory.touch(regions, ops, offsets, k)
        block = memory.view(src)[:span].copy()
        low = (starts[:, None] + p.low).ravel()
        high = (starts[:, None] + p.high).ravel()
        compare_exchange(block, low, high, np.tile(p.ascending, segments), key)
        memory.view(dst)[:span] = block
        memory.count_comparisons(len(p.low) * segments)
        src, dst = dst, src
    logger.debug("striped bitonic: %d segments of %d, %d passes", segments, k, schedule.depth)
    return src


def _half_positions(in_low):
    positions = np.empty(len(in_low), dtype=np.int64)
    positions[in_low] = np.arange(np.count_nonzero(in_low))
    positions[~in_low] = np.arange(np.count_nonzero(~in_low))
    return positions


def striped_bitonic(memory, pairs, halves, k, segments, key=by_sort_key):
    """Sort `segments` consecutive k-slot segments of `pairs` one slot at a time.

    Every pass is two sequential sweeps over three disks. A split sweep deals
    pairs[] into halves[0] (slots with the stride bit clear) and halves[1]
    (bit set); a comparator sweep reads both halves in step and writes each
    compared pair back to pairs[] side by side. The layout of pairs[] after a
    pass is therefore a bit permutation of slot order, and the last pass of
    the network restores natural order. The client holds at most two
    elements.
    """
    schedule = bitonic_schedule(k)
    half = k // 2
    span = segments * k
    order = np.arange(k, dtype=np.int64)  # slot held at each position of pairs[]
    seg_full = np.arange(segments, dtype=np.int64)[:, None] * k
    seg_half = np.arange(segments, dtype=np.int64)[:, None] * half
    split_ops = np.tile(np.array([Op.READ, Op.WRITE], dtype=np.uint8), span)
    for p in schedule.passes:
        in_low = (order & p.stride) == 0
        dest = np.where(in_low, halves[0], halves[1])
        regions = np.tile(np.stack([np.full(k, pairs), dest], axis=1).ravel(), segments)
        offsets = np.stack([seg_full + np.arange(k), seg_half + _half_positions(in_low)],
                           axis=2).ravel()
        memory.touch(regions, split_ops, offsets)
        data = memory.view(pairs)[:span].reshape(segments, k)
        first = data[:, in_low].ravel()
        second = data[:, ~in_low].ravel()
        memory.view(halves[0])[:segments * half] = first
        memory.view(halves[1])[:segments * half] = second

        # entries at equal positions of the two halves are comparator partners
        low_slots, high_slots = order[in_low], order[~in_low]
        ascending = np.tile(p.ascending[np.searchsorted(p.low, low_slots)], segments)
        c = np.arange(half, dtype=np.int64)
        regions = np.tile(np.array([halves[0], halves[1], pairs, pairs], dtype=np.int64),
                          segments * half)
        offsets = np.stack([seg_half + c, seg_half + c, seg_full + 2 * c, seg_full + 2 * c + 1],
                           axis=2).ravel()
        memory.touch(regions, np.tile(_COMPARATOR_OPS, segments * half), offsets)
        k_first, k_second = key(first), key(second)
        swap = np.where(ascending, lex_greater(k_first, k_second), lex_greater(k_second, k_first))
        out = np.empty((segments * half, 2), dtype=first.dtype)
        out[:, 0] = first
        out[:, 1] = second
        out[swap, 0] = second[swap]
        out[swap, 1] = first[swap]
        memory.view(pairs)[:span] = out.ravel()
        memory.count_comparisons(segments * half)
        order = np.stack([low_slots, high_slots], axis=1).ravel()
    logger.debug("streamed striped bitonic: %d segments of %d, %d passes",
                 segments, k, schedule.depth)


def sentinel_accesses(n):
    """Accesses that land on +inf padding when n keys are padded to a power of two.

    Padding moves only when it meets a real key, so its positions evolve
    independently of the real keys.
    """
    m = 1 << max(0, (int(n) - 1).bit_length())
    if m == n:
        return 0
    padding = np.arange(m) >= n
    touched = 0
    for p in bitonic_schedule(m).passes:
        first = padding[p.low]
        second = padding[p.high]
        touched += int(np.count_nonzero(first) + np.count_nonzero(second))
        swap = np.where(p.ascending, first & ~second, ~first & second)
        padding[p.low] = np.where(swap, second, first)
        padding[p.high] = np.where(swap, first, second)
    # each padded operand is read once and written once
    return 2 * touched
