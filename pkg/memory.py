"""
Instrumented server memory.

Holds the bucket grid and named flat arrays, records every client access as
a trace event, charges the client working set against its budget, and
tracks one head per disk so that every non-sequential access costs a move.
"""

import hashlib
import logging
from contextlib import contextmanager
from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import NamedTuple, Optional

import numpy as np

from config import BUCKET_CLIENT_BUDGET_FACTOR, CONST_CLIENT_BUDGET
from core import BucketGrid, BudgetExceeded, ClientMode, RoutingEngine, dummies, element_dtype

logger = logging.getLogger(__name__)


class Op(IntEnum):
    READ = 0
    WRITE = 1
    MOVE = 2


class Kind(IntEnum):
    BUCKET = 0
    FLAT = 1
    MOVE = 2


OP_NAMES = ("read", "write", "move")

EVENT_DTYPE = np.dtype([
    ("op", "u1"),
    ("kind", "u1"),
    ("region", "<i8"),  # level for bucket events, array id for flat events
    ("index", "<i8"),   # bucket index or flat offset
    ("length", "<i8"),  # elements touched
    ("disk", "<i8"),
    ("addr", "<i8"),
])


class BucketRegion(NamedTuple):
    level: int
    index: int


class FlatRegion(NamedTuple):
    array_id: int
    offset: int
    length: int


class TraceEvent(NamedTuple):
    op: Op
    region: Optional[object]
    disk: int
    elements_touched: int
    addr: int


class TraceMode(Enum):
    FULL = "full"      # every event kept
    DIGEST = "digest"  # running digest of the event stream
    COUNTS = "counts"  # totals only


@dataclass(frozen=True)
class TraceTotals:
    element_reads: int = 0
    element_writes: int = 0
    bucket_reads: int = 0
    bucket_writes: int = 0
    moves: tuple = ()

    @property
    def accesses(self):
        return self.element_reads + self.element_writes

    @property
    def total_moves(self):
        return sum(self.moves)

    def __add__(self, other):
        return TraceTotals(
            self.element_reads + other.element_reads,
            self.element_writes + other.element_writes,
            self.bucket_reads + other.bucket_reads,
            self.bucket_writes + other.bucket_writes,
            tuple(a + b for a, b in zip(self.moves, other.moves)),
        )


def tally(events, disks):
    op = events["op"]
    reads = op == Op.READ
    writes = op == Op.WRITE
    bucket = events["kind"] == Kind.BUCKET
    return TraceTotals(
        element_reads=int(events["length"][reads].sum()),
        element_writes=int(events["length"][writes].sum()),
        bucket_reads=int(np.count_nonzero(reads & bucket)),
        bucket_writes=int(np.count_nonzero(writes & bucket)),
        moves=tuple(int(c) for c in np.bincount(events["disk"][op == Op.MOVE], minlength=disks)),
    )


def event_line(row):
    op = int(row["op"])
    kind = int(row["kind"])
    if kind == Kind.MOVE:
        return f"move {row['disk']} {row['addr']}"
    if kind == Kind.BUCKET:
        return f"{OP_NAMES[op]} {row['region']} {row['index']} {row['disk']} {row['length']}"
    return f"{OP_NAMES[op]} flat:{row['region']} {row['index']} {row['length']} {row['disk']}"


def _event_tuple(row):
    op = Op(int(row["op"]))
    kind = int(row["kind"])
    disk, addr, length = int(row["disk"]), int(row["addr"]), int(row["length"])
    if kind == Kind.MOVE:
        return TraceEvent(op, None, disk, 0, addr)
    if kind == Kind.BUCKET:
        region = BucketRegion(int(row["region"]), int(row["index"]))
    else:
        region = FlatRegion(int(row["region"]), int(row["index"]), length)
    return TraceEvent(op, region, disk, length, addr)


class Trace:
    """Ordered access events of one run, with running totals."""

    def __init__(self, disks=1, mode=TraceMode.FULL):
        self.disks = disks
        self.mode = TraceMode(mode)
        self.count = 0
        self.totals = TraceTotals(moves=(0,) * disks)
        self._chunks = []
        self._events = None
        self._hash = None if self.mode is TraceMode.COUNTS else hashlib.blake2b(digest_size=16)

    def extend(self, events):
        if not len(events):
            return
        self.totals = self.totals + tally(events, self.disks)
        self.count += len(events)
        if self._hash is not None:
            self._hash.update(events.tobytes())
        if self.mode is TraceMode.FULL:
            self._chunks.append(events)
            self._events = None

    @property
    def events(self):
        if self.mode is not TraceMode.FULL:
            raise ValueError(f"events are not kept in {self.mode.value} mode")
        if self._events is None:
            if self._chunks:
                self._events = np.ascontiguousarray(np.concatenate(self._chunks))
            else:
                self._events = np.zeros(0, dtype=EVENT_DTYPE)
            self._chunks = [self._events]
        return self._events

    @property
    def digest(self):
        return None if self._hash is None else self._hash.hexdigest()

    def __len__(self):
        return self.count

    def __getitem__(self, position):
        return _event_tuple(self.events[position])

    def __iter__(self):
        for row in self.events:
            yield _event_tuple(row)

    def recompute_totals(self):
        return tally(self.events, self.disks)

    def lines(self):
        for row in self.events:
            yield event_line(row)

    def to_text(self):
        return "".join(line + "\n" for line in self.lines())

    def write_text(self, path):
        with open(path, "w", newline="\n") as f:
            for line in self.lines():
                f.write(line + "\n")


class TraceComparison(NamedTuple):
    equal: bool
    divergence: Optional[int]


def trace_equal(t1, t2):
    """Field-by-field equality; divergence is the first differing event index.

    Digest-mode traces compare by digest and length and cannot locate the
    divergence (None).
    """
    if t1.mode is TraceMode.FULL and t2.mode is TraceMode.FULL:
        a, b = t1.events, t2.events
        shared = min(len(a), len(b))
        if shared:
            rows_a = a[:shared].view(np.uint8).reshape(shared, -1)
            rows_b = b[:shared].view(np.uint8).reshape(shared, -1)
            differing = np.flatnonzero(np.any(rows_a != rows_b, axis=1))
            if len(differing):
                return TraceComparison(False, int(differing[0]))
        if len(a) != len(b):
            return TraceComparison(False, shared)
        return TraceComparison(True, None)
    if t1.digest is None or t2.digest is None:
        raise ValueError("traces recorded without events or digest cannot be compared")
    equal = t1.count == t2.count and t1.digest == t2.digest
    return TraceComparison(equal, None)


class DiskLayout:
    """Regions packed per disk, one head per disk."""

    def __init__(self, disks=1):
        self.disks = disks
        self.regions = [[] for _ in range(disks)]
        self.ends = np.zeros(disks, dtype=np.int64)
        self.heads = np.full(disks, -1, dtype=np.int64)

    def place(self, name, length, disk):
        base = int(self.ends[disk])
        self.regions[disk].append(name)
        self.ends[disk] += length
        return base

    def advance(self, disks, addrs, lengths):
        """Move heads through a run of accesses; True where an access needed a seek.

        A head lands just past each access and wraps to 0 at the end of its disk.
        """
        moves = np.zeros(len(addrs), dtype=bool)
        for disk in np.unique(disks):
            idx = np.flatnonzero(disks == disk)
            start = addrs[idx]
            landed = (start + lengths[idx]) % self.ends[disk]
            expected = np.empty_like(start)
            expected[0] = self.heads[disk]
            expected[1:] = landed[:-1]
            moves[idx] = start != expected
            self.heads[disk] = landed[-1]
        return moves


@dataclass
class PhaseCost:
    reads: int = 0
    writes: int = 0
    moves: int = 0
    comparisons: int = 0

    @property
    def accesses(self):
        return self.reads + self.writes


@dataclass
class _Region:
    name: str
    disk: int
    base: int
    length: int
    data: Optional[np.ndarray] = None
    level: Optional[int] = None


@dataclass
class _Snapshot:
    reads: int
    writes: int
    moves: int
    comparisons: int


class Memory:
    """Server memory for one run (single owner)."""

    def __init__(self, disks=1, budget=None, whole_bucket_reads=True, dtype=None,
                 trace_mode=TraceMode.FULL):
        self.disks = disks
        self.budget = budget
        self.whole_bucket_reads = whole_bucket_reads
        self.dtype = dtype or element_dtype()
        self.layout = DiskLayout(disks)
        self.trace = Trace(disks, trace_mode)
        self.grid = None
        self.live = 0
        self.peak = 0
        self.comparisons = 0
        self.phases = {}
        self._regions = []
        self._names = {}
        self._level_regions = []
        self._region_disk = np.zeros(0, dtype=np.int64)
        self._region_base = np.zeros(0, dtype=np.int64)
        self._next_disk = 0

    @classmethod
    def for_params(cls, params, trace_mode=TraceMode.FULL):
        const = params.client_mode is ClientMode.CONST
        budget = CONST_CLIENT_BUDGET if const else BUCKET_CLIENT_BUDGET_FACTOR * params.Z
        memory = cls(params.disks, budget, whole_bucket_reads=not const,
                     dtype=params.dtype, trace_mode=trace_mode)
        if params.engine is not RoutingEngine.STRIPED:
            memory.attach_grid(params.levels + 1, params.B, params.Z)
        return memory

    # -- layout -------------------------------------------------------------

    def _add_region(self, name, length, disk, data=None, level=None):
        if name in self._names:
            raise ValueError(f"region {name!r} already allocated")
        if not 0 <= disk < self.disks:
            raise ValueError(f"disk {disk} outside 0..{self.disks - 1}")
        base = self.layout.place(name, length, disk)
        region_id = len(self._regions)
        self._regions.append(_Region(name, disk, base, length, data, level))
        self._names[name] = region_id
        self._region_disk = np.append(self._region_disk, disk)
        self._region_base = np.append(self._region_base, base)
        return region_id

    def attach_grid(self, num_levels, buckets, capacity):
        self.grid = BucketGrid(num_levels, buckets, capacity, self.dtype)
        # consecutive levels sit on different disks whenever D >= 2
        self._level_regions = [
            self._add_region(f"level{i}", buckets * capacity, i % self.disks, level=i)
            for i in range(num_levels)
        ]
        return self.grid

    def allocate(self, name, length=None, disk=None, data=None):
        """New flat array; `data` is placed untraced (already resident on the server)."""
        if disk is None:
            disk = self._next_disk
            self._next_disk = (self._next_disk + 1) % self.disks
        if data is not None:
            data = np.array(data, dtype=self.dtype)
            length = len(data)
        region_id = self._add_region(name, length, disk)
        self._regions[region_id].data = data if data is not None else dummies(length, self.dtype)
        return region_id

    def region_id(self, name):
        return self._names[name]

    def level_region(self, level):
        return self._level_regions[level]

    def disk_of(self, region_id):
        return self._regions[region_id].disk

    def length_of(self, region_id):
        return self._regions[region_id].length

    def view(self, region_id):
        """Backing array of a region (no access recorded)."""
        region = self._regions[region_id]
        if region.level is not None:
            return self.grid.flat(region.level)
        return region.data

    # -- accounting ---------------------------------------------------------

    def _charge(self, ops, lengths, keep):
        reads = ops == Op.READ
        delta = np.where(reads, np.where(keep, lengths, 0), -lengths)
        held = self.live + np.cumsum(delta)
        held = held - np.minimum(np.minimum.accumulate(held), 0)
        peak = int(held.max())
        dropped = reads & ~keep
        if dropped.any():
            # a dropped read is held only until the next access
            before = np.concatenate(([self.live], held[:-1]))
            peak = max(peak, int((before + lengths)[dropped].max()))
        if self.budget is not None and peak > self.budget:
            raise BudgetExceeded(f"client would hold {peak} elements, budget is {self.budget}")
        self.live = int(held[-1])
        self.peak = max(self.peak, peak)

    def _emit(self, kind, ops, region, index, lengths, disks, addrs, keep=True):
        count = len(addrs)
        if count == 0:
            return
        ops = np.broadcast_to(np.asarray(ops, dtype=np.uint8), count)
        lengths = np.broadcast_to(np.asarray(lengths, dtype=np.int64), count)
        disks = np.broadcast_to(np.asarray(disks, dtype=np.int64), count)
        keep = np.broadcast_to(np.asarray(keep, dtype=bool), count)
        self._charge(ops, lengths, keep)
        moves = self.layout.advance(disks, addrs, lengths)

        seeks = np.flatnonzero(moves)
        events = np.empty(count + len(seeks), dtype=EVENT_DTYPE)
        slots = np.arange(count) + np.cumsum(moves)
        events["op"][slots] = ops
        events["kind"][slots] = kind
        events["region"][slots] = region
        events["index"][slots] = index
        events["length"][slots] = lengths
        events["disk"][slots] = disks
        events["addr"][slots] = addrs
        if len(seeks):
            before = slots[seeks] - 1
            events["op"][before] = Op.MOVE
            events["kind"][before] = Kind.MOVE
            events["region"][before] = -1
            events["index"][before] = -1
            events["length"][before] = 0
            events["disk"][before] = disks[seeks]
            events["addr"][before] = addrs[seeks]
        self.trace.extend(events)

    def touch(self, regions, ops, offsets, lengths=1, keep=True):
        """Record flat accesses (no data moved); all arguments broadcast together.

        Reads with keep=False are inspected and dropped by the client.
        """
        regions, ops, offsets, lengths = np.broadcast_arrays(
            np.atleast_1d(np.asarray(regions, dtype=np.int64)),
            np.atleast_1d(np.asarray(ops, dtype=np.uint8)),
            np.atleast_1d(np.asarray(offsets, dtype=np.int64)),
            np.atleast_1d(np.asarray(lengths, dtype=np.int64)),
        )
        addrs = self._region_base[regions] + offsets
        self._emit(Kind.FLAT, ops, regions, offsets, lengths, self._region_disk[regions], addrs, keep)

    def release(self, count=None):
        """Client drops held elements without writing them back."""
        self.live = 0 if count is None else max(0, self.live - int(count))

    def count_comparisons(self, count):
        self.comparisons += int(count)

    # -- buckets ------------------------------------------------------------

    def _bucket_event(self, op, level, index):
        region = self._regions[self._level_regions[level]]
        Z = self.grid.capacity
        addr = np.array([region.base + index * Z], dtype=np.int64)
        self._emit(Kind.BUCKET, op, level, index, Z, region.disk, addr)

    def read_bucket(self, level, index):
        if not self.whole_bucket_reads:
            raise BudgetExceeded("whole-bucket reads need bucket client storage; stream slots instead")
        self._bucket_event(Op.READ, level, index)
        return self.grid.level(level)[index].copy()

    def write_bucket(self, level, index, contents):
        contents = np.asarray(contents, dtype=self.dtype)
        if len(contents) != self.grid.capacity:
            raise ValueError(f"bucket write of {len(contents)} slots, expected {self.grid.capacity}")
        self._bucket_event(Op.WRITE, level, index)
        self.grid.level(level)[index] = contents

    def level_view(self, level):
        return self.grid.level(level)

    # -- flat arrays --------------------------------------------------------

    def read_range(self, region_id, offset, length):
        self.touch(region_id, Op.READ, offset, length)
        return self.view(region_id)[offset:offset + length].copy()

    def write_range(self, region_id, offset, values):
        values = np.asarray(values, dtype=self.dtype)
        if len(values):
            self.touch(region_id, Op.WRITE, offset, len(values))
        self.view(region_id)[offset:offset + len(values)] = values

    # -- reporting ----------------------------------------------------------

    @property
    def moves(self):
        return self.trace.totals.total_moves

    def _snapshot(self):
        totals = self.trace.totals
        return _Snapshot(totals.element_reads, totals.element_writes,
                         totals.total_moves, self.comparisons)

    @contextmanager
    def phase(self, name):
        """Attribute accesses made inside the block to phase `name`."""
        before = self._snapshot()
        try:
            yield
        finally:
            after = self._snapshot()
            cost = self.phases.setdefault(name, PhaseCost())
            cost.reads += after.reads - before.reads
            cost.writes += after.writes - before.writes
            cost.moves += after.moves - before.moves
            cost.comparisons += after.comparisons - before.comparisons
            logger.debug("phase %s: %d accesses, %d moves", name,
                         after.reads - before.reads + after.writes - before.writes,
                         after.moves - before.moves)
