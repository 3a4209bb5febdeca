"""
Shared record types, instance parameters and butterfly index arithmetic
"""

from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache

import numpy as np

from config import (
    DEFAULT_DISKS,
    DEFAULT_LABEL_WIDTH,
    DEFAULT_PAYLOAD_WIDTH,
    DEFAULT_SEED,
    STRIPED_MIN_DISKS,
)


class ObliviousSortError(Exception):
    """Base class for every error raised by the toolkit."""


class InvalidParams(ObliviousSortError, ValueError):
    pass


class InvalidLength(ObliviousSortError, ValueError):
    pass


class LabelWidthTooSmall(ObliviousSortError, ValueError):
    pass


class BudgetExceeded(ObliviousSortError):
    pass


class Overflow(ObliviousSortError):
    """A MergeSplit output side received more than Z reals."""

    def __init__(self, level, bucket, count, capacity):
        self.level = level
        self.bucket = bucket
        self.count = count
        self.capacity = capacity
        super().__init__(
            f"overflow at level {level}, bucket {bucket}: "
            f"{count} reals for {capacity} slots"
        )


class ClientMode(Enum):
    BUCKET = "bucket"  # 2Z elements of working storage
    CONST = "const"    # O(1) elements


class RoutingEngine(Enum):
    BUCKET = "bucket"
    BITONIC = "bitonic"
    STRIPED = "striped"


def is_power_of_two(value):
    return value >= 1 and value & (value - 1) == 0


def log2_exact(value):
    return int(value).bit_length() - 1


def ceil_log2(value):
    """Smallest d with 2^d >= value (0 for value <= 1)."""
    return max(0, (int(value) - 1).bit_length())


def next_power_of_two(value):
    return 1 << ceil_log2(value)


# ---------------------------------------------------------------------------
# Element records
# ---------------------------------------------------------------------------

@lru_cache(maxsize=None)
def element_dtype(payload_width=DEFAULT_PAYLOAD_WIDTH):
    # rank is scratch space for sorting networks: source slot during
    # MergeSplit, random label during the bucket permutation
    fields = [
        ("sort_key", "<u8"),
        ("label", "<u8"),
        ("rank", "<u8"),
        ("is_real", "?"),
    ]
    if payload_width > 0:
        fields.append(("payload", f"V{payload_width}"))
    return np.dtype(fields)


def payload_width_of(dtype):
    if "payload" not in dtype.names:
        return 0
    return dtype.fields["payload"][0].itemsize


def dummies(count, dtype=None):
    return np.zeros(count, dtype=dtype or element_dtype())


def as_elements(values, payload_width=DEFAULT_PAYLOAD_WIDTH, payloads=None):
    """Wrap plain keys (or pass through element records) as real elements."""
    if isinstance(values, np.ndarray) and values.dtype.names is not None:
        return values.copy()
    keys = np.asarray(values, dtype=np.uint64).reshape(-1)
    records = np.zeros(len(keys), dtype=element_dtype(payload_width))
    records["sort_key"] = keys
    records["is_real"] = True
    if payloads is not None and payload_width > 0:
        records["payload"] = np.frombuffer(
            b"".join(payloads), dtype=f"V{payload_width}"
        )
    return records


def canonical(records):
    """Copy with dummy contents and scratch ranks cleared, for slot comparison."""
    out = records.copy()
    out["rank"] = 0
    out[~out["is_real"]] = np.zeros(1, dtype=out.dtype)
    return out


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Params:
    n: int
    Z: int
    B: int
    client_mode: ClientMode = ClientMode.BUCKET
    seed: int = DEFAULT_SEED
    disks: int = DEFAULT_DISKS
    payload_width: int = DEFAULT_PAYLOAD_WIDTH
    label_width: int = DEFAULT_LABEL_WIDTH
    groups: tuple = field(default=(), compare=False, repr=False)

    @property
    def levels(self):
        """Number of MergeSplit levels, log2 B."""
        return log2_exact(self.B)

    @property
    def dtype(self):
        return element_dtype(self.payload_width)

    @property
    def engine(self):
        return routing_engine(self)


def bucket_count(n, Z):
    """Smallest power of two >= 2n/Z."""
    target = -(-2 * n // Z)
    return 1 << ceil_log2(target)


def group_sizes(n, B):
    base, extra = divmod(n, B)
    sizes = np.full(B, base, dtype=np.int64)
    sizes[:extra] += 1
    return sizes


def derive_params(n, Z, client_mode=ClientMode.BUCKET, seed=DEFAULT_SEED,
                  disks=DEFAULT_DISKS, payload_width=DEFAULT_PAYLOAD_WIDTH,
                  label_width=DEFAULT_LABEL_WIDTH):
    client_mode = ClientMode(client_mode)
    if n < 1:
        raise InvalidParams(f"n must be at least 1, got {n}")
    if Z < 2 or Z % 2:
        raise InvalidParams(f"Z must be even and at least 2, got {Z}")
    if disks < 1:
        raise InvalidParams(f"disks must be at least 1, got {disks}")
    if payload_width < 0:
        raise InvalidParams(f"payload width must be non-negative, got {payload_width}")
    B = bucket_count(n, Z)
    if -(-n // B) > Z // 2:
        raise InvalidParams(f"groups of {-(-n // B)} exceed Z/2 = {Z // 2}")
    return Params(
        n=n, Z=Z, B=B, client_mode=client_mode, seed=int(seed), disks=disks,
        payload_width=payload_width, label_width=label_width,
        groups=tuple(int(g) for g in group_sizes(n, B)),
    )


def routing_engine(params):
    """Bucket clients route in the client at any disk count; constant-storage
    clients sort through memory, pass-major over whole levels on 3+ disks."""
    if params.client_mode is ClientMode.BUCKET:
        return RoutingEngine.BUCKET
    if params.disks >= STRIPED_MIN_DISKS:
        return RoutingEngine.STRIPED
    return RoutingEngine.BITONIC


# ---------------------------------------------------------------------------
# Butterfly network
# ---------------------------------------------------------------------------

def merge_split_indices(i, j, B):
    """Input and output bucket indices of the j-th MergeSplit at level i."""
    base = (j >> i) << i
    return base + j, base + j + (1 << i), 2 * j, 2 * j + 1


def butterfly_wiring(i, B):
    j = np.arange(B // 2, dtype=np.int64)
    base = (j >> i) << i
    return base + j, base + j + (1 << i), 2 * j, 2 * j + 1


def route_bucket(buckets, bits, i):
    """Bucket at level i+1 reached from level-i bucket `buckets` with label bit `bits`."""
    j = ((buckets >> (i + 1)) << i) | (buckets & ((1 << i) - 1))
    return 2 * j + bits


def label_bit(labels, i, levels):
    """(i+1)-st most significant bit of a levels-bit label."""
    shift = np.uint64(levels - 1 - i)
    return ((np.asarray(labels, dtype=np.uint64) >> shift) & np.uint64(1)).astype(np.int64)


def label_prefix(labels, i, levels):
    """Top i bits of a levels-bit label."""
    shift = np.uint64(levels - i)
    return (np.asarray(labels, dtype=np.uint64) >> shift).astype(np.int64)


class BucketGrid:
    """(log B + 1) levels of B buckets with Z slots each, allocated on first use."""

    def __init__(self, num_levels, buckets, capacity, dtype=None):
        self.num_levels = num_levels
        self.buckets = buckets
        self.capacity = capacity
        self.dtype = dtype or element_dtype()
        self._levels = [None] * num_levels

    def level(self, i):
        if self._levels[i] is None:
            self._levels[i] = dummies(self.buckets * self.capacity, self.dtype)
        return self._levels[i].reshape(self.buckets, self.capacity)

    def flat(self, i):
        self.level(i)
        return self._levels[i]


def reals_first(buckets):
    real = np.asarray(buckets["is_real"]).reshape(-1, buckets.shape[-1])
    return bool(np.all(real[:, :-1] >= real[:, 1:]))


def bucket_loads(buckets):
    return np.asarray(buckets["is_real"]).sum(axis=-1).astype(np.int64)


def is_semi_sorted(buckets, i, levels):
    """Every real at level i carries top-i label bits equal to its position in a 2^i block."""
    real = buckets["is_real"]
    position = np.arange(buckets.shape[0], dtype=np.int64) & ((1 << i) - 1)
    prefix = label_prefix(buckets["label"], i, levels)
    return bool(np.all(prefix[real] == np.broadcast_to(position[:, None], real.shape)[real]))
