"""
Seedable, splittable random streams.

Every stream is keyed by (master seed, purpose, index) and backed by a
Philox counter-based generator, so a stream can be recreated anywhere
without sharing state with its siblings.
"""

from enum import IntEnum

import numpy as np

MASK64 = (1 << 64) - 1


class StreamPurpose(IntEnum):
    LABELS = 0
    PERMUTATION = 1
    BUCKET_LABELS = 2
    TRIAL = 3
    INPUT = 4
    RETRY = 5


def _seed_sequence(seed, purpose, index):
    return np.random.SeedSequence(int(seed) & MASK64, spawn_key=(int(purpose), int(index)))


class RngStream:
    """One reproducible stream; `position` counts 64-bit words handed out."""

    def __init__(self, seed, purpose=StreamPurpose.LABELS, index=0):
        self.seed = int(seed) & MASK64
        self.tag = (int(purpose), int(index))
        self.position = 0
        self._bits = np.random.Philox(_seed_sequence(self.seed, *self.tag))

    def __repr__(self):
        return f"RngStream(seed={self.seed:#x}, tag={self.tag}, position={self.position})"

    def next_u64(self, count=None):
        if count is None:
            self.position += 1
            return int(self._bits.random_raw())
        self.position += int(count)
        return np.asarray(self._bits.random_raw(int(count)), dtype=np.uint64)

    def permutation(self, k):
        """Uniform permutation of range(k): the ranks of k distinct 64-bit words.

        Words are redrawn on a collision, so `position` advances by a multiple of k.
        """
        while True:
            words = self.next_u64(k)
            if len(np.unique(words)) == k:
                return np.argsort(words, kind="stable")

    def spawn(self, purpose, index=0):
        """Sibling stream under the same master seed."""
        return RngStream(self.seed, purpose, index)


def derive_seed(seed, purpose, index):
    """Fresh 64-bit master seed for run `index` (e.g. one Monte Carlo trial)."""
    state = _seed_sequence(seed, purpose, index).generate_state(1, np.uint64)
    return int(state[0])


def draw_label(stream, B):
    return stream.next_u64() & (B - 1)


def draw_labels(stream, B, count):
    """`count` labels in [0, B-1], the low log2 B bits of consecutive outputs."""
    return stream.next_u64(count) & np.uint64(B - 1)


def parse_seed(text):
    text = str(text).strip()
    value = int(text, 16) if text.lower().startswith("0x") else int(text, 10)
    if not 0 <= value <= MASK64:
        raise ValueError(f"seed out of 64-bit range: {text}")
    return value
