"""Tsum: a SpaceSaving counter summary of the cells where one term occurs."""

from __future__ import annotations

import csv
import heapq
import io
import struct
from typing import NamedTuple

from .errors import SnapshotError

_MAGIC = b"TSUM"
_VERSION = 1
_HEADER = struct.Struct("<4sHIQI")
_RECORD = struct.Struct("<IQQ")


class Counter(NamedTuple):
    """One monitored cell: estimated frequency ``f`` and overestimation ``delta``."""

    cell: int
    f: int
    delta: int

    @property
    def guaranteed(self) -> int:
        """Lower bound on the true frequency."""
        return self.f - self.delta


_new_counter = tuple.__new__  # skips the NamedTuple constructor on the eviction path


class Tsum:
    """SpaceSaving summary with at most ``capacity`` counters.

    Counters are grouped into buckets of equal frequency. Only the minimum
    bucket ever needs an eviction order, so it alone carries a heap keyed by
    ``(-delta, cell)``: among the least frequent counters the one with the
    largest error (then the lowest cell id) is evicted first.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError(f"capacity must be at least 1, got {capacity}")
        self.capacity = int(capacity)
        self.n = 0
        self._f: dict[int, int] = {}
        self._delta: dict[int, int] = {}
        self._buckets: dict[int, set[int]] = {}
        self._min_f = 0
        self._heap: list[tuple[int, int]] | None = None
        self._heap_f = -1

    def __len__(self) -> int:
        return len(self._f)

    def __contains__(self, cell) -> bool:
        return cell in self._f

    def get(self, cell: int) -> Counter | None:
        f = self._f.get(cell)
        return None if f is None else Counter(cell, f, self._delta[cell])

    @property
    def is_full(self) -> bool:
        return len(self._f) >= self.capacity

    @property
    def min_f(self) -> int:
        return self._min_f if self._f else 0

    def _move(self, cell: int, f: int) -> None:
        bucket = self._buckets[f]
        bucket.discard(cell)
        if not bucket:
            del self._buckets[f]
            if f == self._min_f:
                self._min_f = f + 1
        self._buckets.setdefault(f + 1, set()).add(cell)

    def increment(self, cell: int) -> None:
        f = self._f[cell]
        self._f[cell] = f + 1
        self._move(cell, f)
        self.n += 1

    def insert(self, cell: int) -> None:
        if cell in self._f or self.is_full:
            raise ValueError(f"cannot insert cell {cell}")
        self._f[cell] = 1
        self._delta[cell] = 0
        self._buckets.setdefault(1, set()).add(cell)
        self._min_f = 1
        self._heap_f = -1
        self.n += 1

    def min_counter(self) -> Counter:
        """The counter the next eviction would remove."""
        f = self._min_f
        if self._heap_f != f:
            self._heap = [(-self._delta[c], c) for c in self._buckets[f]]
            heapq.heapify(self._heap)
            self._heap_f = f
        heap = self._heap
        bucket = self._buckets[f]
        # Entries go stale when their counter is incremented out of the bucket;
        # nothing new enters the minimum bucket while it is the minimum.
        while heap[0][1] not in bucket:
            heapq.heappop(heap)
        neg_delta, cell = heap[0]
        return Counter(cell, f, -neg_delta)

    def replace_min(self, cell: int) -> Counter:
        """Evict the minimum counter in favour of ``cell``; return the evicted one."""
        if cell in self._f:
            raise ValueError(f"cell {cell} is already monitored")
        return self._evict(cell)

    def _evict(self, cell: int) -> Counter:
        f = self._min_f
        buckets = self._buckets
        bucket = buckets[f]
        heap = self._heap
        if self._heap_f != f:
            delta = self._delta
            heap = self._heap = [(-delta[c], c) for c in bucket]
            heapq.heapify(heap)
            self._heap_f = f
        while heap[0][1] not in bucket:
            heapq.heappop(heap)
        neg_delta, victim = heapq.heappop(heap)
        fs, deltas = self._f, self._delta
        del fs[victim]
        del deltas[victim]
        bucket.discard(victim)
        fs[cell] = f + 1
        deltas[cell] = f
        nxt = buckets.get(f + 1)
        if nxt is None:
            buckets[f + 1] = {cell}
        else:
            nxt.add(cell)
        if not bucket:
            del buckets[f]
            self._min_f = f + 1
        self.n += 1
        return _new_counter(Counter, (victim, f, -neg_delta))

    def update(self, cell: int) -> Counter | None:
        """Count one occurrence at ``cell``. Returns the evicted counter, if any."""
        f = self._f.get(cell)
        if f is not None:
            # Inlined increment(); this is the hot path.
            self._f[cell] = f + 1
            buckets = self._buckets
            bucket = buckets[f]
            bucket.discard(cell)
            if not bucket:
                del buckets[f]
                if f == self._min_f:
                    self._min_f = f + 1
            nxt = buckets.get(f + 1)
            if nxt is None:
                buckets[f + 1] = {cell}
            else:
                nxt.add(cell)
            self.n += 1
            return None
        if len(self._f) < self.capacity:
            self.insert(cell)
            return None
        return self._evict(cell)

    def counters(self) -> list[Counter]:
        """All counters, by frequency descending then cell id ascending."""
        order = sorted(self._f, key=lambda c: (-self._f[c], c))
        return [Counter(c, self._f[c], self._delta[c]) for c in order]

    def top_k(self, k: int) -> list[Counter]:
        if k < 1:
            raise ValueError("k must be at least 1")
        return self.counters()[:k]

    def total_frequency(self) -> int:
        return sum(self._f.values())

    def frequency_upper_bound(self, cell: int) -> int:
        f = self._f.get(cell)
        if f is not None:
            return f
        return self.min_f

    def max_delta(self) -> int:
        return max(self._delta.values(), default=0)

    def copy(self) -> "Tsum":
        return Tsum.from_counters(self.capacity, self.counters(), self.n)

    @classmethod
    def from_counters(cls, capacity: int, counters, n: int) -> "Tsum":
        t = cls(capacity)
        for c in counters:
            if c.cell in t._f or len(t._f) >= capacity:
                raise SnapshotError("duplicate cell or too many counters in snapshot")
            t._f[c.cell] = c.f
            t._delta[c.cell] = c.delta
            t._buckets.setdefault(c.f, set()).add(c.cell)
        t._min_f = min(t._buckets, default=0)
        t.n = n
        return t

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tsum):
            return NotImplemented
        return (self.capacity, self.n, self.counters()) == (other.capacity, other.n, other.counters())

    # Snapshots

    def to_bytes(self) -> bytes:
        counters = self.counters()
        parts = [_HEADER.pack(_MAGIC, _VERSION, self.capacity, self.n, len(counters))]
        parts.extend(_RECORD.pack(c.cell, c.f, c.delta) for c in counters)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Tsum":
        if len(data) < _HEADER.size:
            raise SnapshotError("truncated Tsum header")
        magic, version, capacity, n, count = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise SnapshotError(f"not a Tsum record (magic={magic!r}, version={version})")
        if len(data) != _HEADER.size + count * _RECORD.size:
            raise SnapshotError("Tsum record length mismatch")
        counters = [Counter(*_RECORD.unpack_from(data, _HEADER.size + i * _RECORD.size)) for i in range(count)]
        return cls.from_counters(capacity, counters, n)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell_id", "f", "delta"])
        for c in self.counters():
            w.writerow([c.cell, c.f, c.delta])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, capacity: int) -> "Tsum":
        rows = list(csv.DictReader(io.StringIO(text)))
        counters = [Counter(int(r["cell_id"]), int(r["f"]), int(r["delta"])) for r in rows]
        return cls.from_counters(capacity, counters, sum(c.f for c in counters))
