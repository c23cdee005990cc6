"""Nonce replay detection with a rotating pair of Bloom filters.

Replay keys are (source, nonce) pairs so equal nonces from different agents
never collide.  The window rotates through two Bloom generations: inserts go
to the current generation, queries consult both, and every half-window the
older generation is dropped.  A key inserted within the active window is
therefore always reported as a replay on resubmission (no false negatives),
and the effective detection window lies between half and the full configured
window, never less than half.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from hashlib import blake2b

from .model import AgentId

DEFAULT_CAPACITY = 10_000_000
DEFAULT_FP_RATE = 1e-4
DEFAULT_WINDOW_SECONDS = 600.0


class BloomFilter:
    """Plain Bloom filter sized from capacity and target false-positive rate."""

    def __init__(self, capacity: int, fp_rate: float):
        if capacity < 1 or not 0 < fp_rate < 1:
            raise ValueError("capacity must be >= 1 and fp_rate in (0, 1)")
        self.capacity = capacity
        self.fp_rate = fp_rate
        bits = -capacity * math.log(fp_rate) / (math.log(2) ** 2)
        self.num_bits = max(8, int(math.ceil(bits)))
        self.num_hashes = max(1, round(self.num_bits / capacity * math.log(2)))
        self._bits = bytearray((self.num_bits + 7) // 8)
        self.count = 0

    def _positions(self, key: bytes):
        digest = blake2b(key, digest_size=16).digest()
        h1 = int.from_bytes(digest[:8], "big")
        h2 = int.from_bytes(digest[8:], "big") | 1
        m = self.num_bits
        return [(h1 + i * h2) % m for i in range(self.num_hashes)]

    def add(self, key: bytes) -> None:
        for pos in self._positions(key):
            self._bits[pos >> 3] |= 1 << (pos & 7)
        self.count += 1

    def __contains__(self, key: bytes) -> bool:
        return all(
            self._bits[pos >> 3] & (1 << (pos & 7)) for pos in self._positions(key)
        )


@dataclass(frozen=True)
class ReplayVerdict:
    fresh: bool

    @property
    def name(self) -> str:
        return "FRESH" if self.fresh else "REPLAY"


FRESH = ReplayVerdict(True)
REPLAY = ReplayVerdict(False)


class ReplayFilter:
    """Two-generation rotating replay window keyed by (source, nonce)."""

    def __init__(
        self,
        capacity: int = DEFAULT_CAPACITY,
        fp_rate: float = DEFAULT_FP_RATE,
        window_seconds: float = DEFAULT_WINDOW_SECONDS,
    ):
        self.capacity = capacity
        self.fp_rate = fp_rate
        self.window_seconds = window_seconds
        self._generation_seconds = window_seconds / 2
        self._current = BloomFilter(capacity, fp_rate)
        self._previous = BloomFilter(capacity, fp_rate)
        self._epoch = 0

    @staticmethod
    def _key(source: AgentId, nonce: int) -> bytes:
        return source.encode("utf-8") + b"\x00" + nonce.to_bytes(8, "big")

    def _advance(self, now: float) -> None:
        epoch = int(now // self._generation_seconds)
        if epoch <= self._epoch:
            # Late or replayed submissions never roll the window back.
            return
        if epoch == self._epoch + 1:
            self._previous = self._current
        else:
            # Jumped more than one generation; both windows have expired.
            self._previous = BloomFilter(self.capacity, self.fp_rate)
        self._current = BloomFilter(self.capacity, self.fp_rate)
        self._epoch = epoch

    def check(self, source: AgentId, nonce: int, now: float) -> ReplayVerdict:
        """REPLAY if the key is probably present in the window, else FRESH.

        Fresh keys are inserted as a side effect, so the first submission of
        a nonce claims it for the rest of the window.
        """
        self._advance(now)
        key = self._key(source, nonce)
        if key in self._current or key in self._previous:
            return REPLAY
        self._current.add(key)
        return FRESH

    def probably_seen(self, source: AgentId, nonce: int, now: float) -> bool:
        """Query without inserting."""
        self._advance(now)
        key = self._key(source, nonce)
        return key in self._current or key in self._previous
