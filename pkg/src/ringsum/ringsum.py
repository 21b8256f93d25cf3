"""Ringsum: Tsum centers that also count occurrences in distance bands around them."""

from __future__ import annotations

import csv
import enum
import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError, SnapshotError
from .grid import (GridConfig, RingCellTable, RingSpec, cell_transfer_matrix, great_circle_km, ring_index,
                   ring_lookup, ring_transfer_matrix)
from .model import RingLikInput
from .tsum import Counter, Tsum

_MAGIC = b"RSUM"
_VERSION = 1
_HEADER = struct.Struct("<4sHIIBBBdQQQI")
_CENTER = struct.Struct("<IQQ")


class Strategy(str, enum.Enum):
    STANDARD = "standard"
    FIXED_CENTER = "fixed_center"
    LIGHT_UPDATE = "light_update"
    PROXIMITY_AWARE = "proximity_aware"


_STRATEGY_CODES = {s: i for i, s in enumerate(Strategy)}
TRANSFERS = ("cells", "planar")


@dataclass
class RingCenter:
    cell: int
    f: int
    delta: int
    phi: np.ndarray


@dataclass
class UpdateStats:
    """Instrumentation counters; not part of the summary state."""

    distance_computations: int = 0
    insertions: int = 0
    evictions: int = 0
    transfers: int = 0
    rejections: int = 0
    dropped: int = 0
    eviction_positions: list = field(default_factory=list)


def add_to_rings(center: RingCenter, cell: int, spec: RingSpec, grid: GridConfig) -> None:
    """Count one occurrence at ``cell`` in the ring of ``center`` that contains it."""
    if int(cell) == center.cell:
        raise ValueError("an occurrence at the center itself is not a ring occurrence")
    i = ring_index(great_circle_km(center.cell, cell, grid), spec)
    if i is not None:
        center.phi[i - 1] += 1


def initialize_rings(new_center: int, evicted: RingCenter, spec: RingSpec, grid: GridConfig,
                     transfer: str = "cells") -> np.ndarray:
    """Ring values for a new center, transferred from the center it replaces.

    Each old ring's mass is assumed uniform over the ring and moves to the new
    rings in proportion to how much of the old ring they cover. ``"cells"``
    measures coverage in grid cells; ``"planar"`` uses tangent-plane annulus
    areas, which lose mass once rings approach the size of the globe.
    """
    if transfer == "cells":
        M = cell_transfer_matrix(evicted.cell, new_center, grid, spec)
    elif transfer == "planar":
        M = ring_transfer_matrix(great_circle_km(evicted.cell, new_center, grid), spec)
    else:
        raise InvalidSpecError(f"unknown transfer {transfer!r}; expected one of {TRANSFERS}")
    return M @ np.asarray(evicted.phi, dtype=float)


def ring_lik_input(center: RingCenter, table: RingCellTable, spec: RingSpec, grid: GridConfig,
                   f_total: float | None = None) -> RingLikInput:
    """Likelihood input for one center.

    ``f_total`` defaults to the mass the center has accounted for,
    ``f + sum(phi)``: a center that entered the summary late has only seen
    part of the stream, and charging it for all of it would bias the fit.
    """
    phi = np.array(center.phi, dtype=float)
    return RingLikInput(
        phi=phi,
        T=table.row(center.cell).astype(float),
        d_exp=spec.d_exp.copy(),
        f_center=float(center.f),
        d_min=grid.d_min_km,
        f_total=float(center.f + phi.sum()) if f_total is None else float(f_total),
    )


class Ringsum:
    """Ring summary for one term.

    The center portion is a plain :class:`Tsum`; ring counters live in a
    ``(capacity, R)`` array indexed by slot, and a replacement center takes
    over the slot of the center it evicts.
    """

    def __init__(self, capacity: int, spec: RingSpec, grid: GridConfig, strategy=Strategy.STANDARD,
                 theta: float = 0.2, expected_total_len: int | None = None, transfer: str = "cells"):
        self.strategy = Strategy(strategy)
        if transfer not in TRANSFERS:
            raise InvalidSpecError(f"unknown transfer {transfer!r}; expected one of {TRANSFERS}")
        self.transfer = transfer
        if self.strategy is Strategy.FIXED_CENTER:
            if not expected_total_len or expected_total_len < 1:
                raise InvalidSpecError("fixed_center needs a positive expected_total_len")
            if not 0 < theta <= 1:
                raise InvalidSpecError(f"theta must lie in (0, 1], got {theta}")
        self.capacity = int(capacity)
        self.spec = spec
        self.grid = grid
        self.theta = float(theta)
        self.expected_total_len = expected_total_len
        self.tsum = Tsum(capacity)
        self.n = 0
        self.frozen = False
        self.stats = UpdateStats()
        self._slot_of: dict[int, int] = {}
        self._slot_cell = np.full(capacity, -1, dtype=np.int64)
        self._slot_row = np.zeros(capacity, dtype=np.int64)
        self._slot_col = np.zeros(capacity, dtype=np.int64)
        self._lookup = ring_lookup(grid, spec)
        self._phi = np.zeros((capacity, spec.R))
        self._memo: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self._slot_of)

    def __contains__(self, cell) -> bool:
        return cell in self._slot_of

    @property
    def freeze_after(self) -> float:
        return self.theta * self.expected_total_len if self.strategy is Strategy.FIXED_CENTER else float("inf")

    def _assign(self, slot: int, cell: int) -> None:
        row, col = divmod(cell, self.grid.n_cols)
        self._slot_of[cell] = slot
        self._slot_cell[slot] = cell
        self._slot_row[slot] = row
        self._slot_col[slot] = col

    def _rings_of(self, cell: int) -> np.ndarray:
        """Ring ordinal (0 = none) of ``cell`` around every occupied slot."""
        k = len(self._slot_of)
        row, col = divmod(cell, self.grid.n_cols)
        return self._lookup[self._slot_row[:k], row, col - self._slot_col[:k] + (self.grid.n_cols - 1)]

    def _add_to_rings(self, cell: int, own_slot: int | None, rings: np.ndarray | None = None) -> None:
        if self.frozen:
            slots, idx = self._frozen_targets(cell)
        else:
            if rings is None:
                rings = self._rings_of(cell)
            self.stats.distance_computations += len(rings) - (own_slot is not None)
            if own_slot is not None:
                rings[own_slot] = 0
            slots = np.flatnonzero(rings)
            idx = rings[slots].astype(np.intp) - 1
        self._phi[slots, idx] += 1.0

    def _frozen_targets(self, cell: int) -> tuple[np.ndarray, np.ndarray]:
        # The center set never changes once frozen, so each cell's ring
        # positions relative to all centers are computed once.
        hit = self._memo.get(cell)
        if hit is None:
            rings = self._rings_of(cell)
            self.stats.distance_computations += len(rings) - (cell in self._slot_of)
            slots = np.flatnonzero(rings)
            hit = (slots, rings[slots].astype(np.intp) - 1)
            self._memo[cell] = hit
        return hit

    def update(self, cell: int) -> None:
        cell = int(cell)
        self.n += 1
        slot = self._slot_of.get(cell)
        if slot is not None:
            self.tsum.increment(cell)
            self._add_to_rings(cell, slot)
            return
        if not self.frozen and self.n > self.freeze_after:
            self.frozen = True
        if self.frozen:
            self.stats.dropped += 1
            self._add_to_rings(cell, None)
            return
        if not self.tsum.is_full:
            self.tsum.insert(cell)
            slot = len(self._slot_of)
            self._assign(slot, cell)
            self.stats.insertions += 1
            self._add_to_rings(cell, slot)
            return
        rings = None
        if self.strategy is Strategy.PROXIMITY_AWARE:
            rings = self._rings_of(cell)
            # Ring 1 is exactly the band (0, d_1].
            if np.any(rings == 1):
                self.stats.rejections += 1
                self._add_to_rings(cell, None, rings)
                return
        evicted = self.tsum.replace_min(cell)
        slot = self._slot_of.pop(evicted.cell)
        self.stats.evictions += 1
        if self.stats.eviction_positions is not None:
            self.stats.eviction_positions.append(self.n)
        if self.strategy is Strategy.LIGHT_UPDATE:
            self._phi[slot] = 0.0
        else:
            old = RingCenter(evicted.cell, evicted.f, evicted.delta, self._phi[slot].copy())
            self._phi[slot] = initialize_rings(cell, old, self.spec, self.grid, self.transfer)
            self.stats.transfers += 1
        self._assign(slot, cell)
        self._add_to_rings(cell, slot, rings)

    def _center(self, c: Counter) -> RingCenter:
        return RingCenter(c.cell, c.f, c.delta, self._phi[self._slot_of[c.cell]].copy())

    def centers(self) -> list[RingCenter]:
        """All centers, by frequency descending then cell id ascending."""
        return [self._center(c) for c in self.tsum.counters()]

    def center(self, cell: int) -> RingCenter | None:
        c = self.tsum.get(cell)
        return None if c is None else self._center(c)

    def top_k(self, k: int) -> list[RingCenter]:
        return [self._center(c) for c in self.tsum.top_k(k)]

    def total_frequency(self) -> int:
        return self.n

    def frequency_upper_bound(self, cell: int) -> int:
        return self.tsum.frequency_upper_bound(cell)

    def ring_lik_input(self, center: RingCenter, table: RingCellTable) -> RingLikInput:
        return ring_lik_input(center, table, self.spec, self.grid)

    def copy(self) -> "Ringsum":
        return Ringsum.from_bytes(self.to_bytes(), self.grid)

    def state_key(self) -> tuple:
        return (self.n, self.frozen, tuple((c.cell, c.f, c.delta, c.phi.tobytes()) for c in self.centers()))

    # Snapshots

    def to_bytes(self) -> bytes:
        centers = self.centers()
        R = self.spec.R
        parts = [
            _HEADER.pack(_MAGIC, _VERSION, self.capacity, R, _STRATEGY_CODES[self.strategy],
                         TRANSFERS.index(self.transfer), int(self.frozen), self.theta,
                         self.expected_total_len or 0, self.n, self.tsum.n, len(centers)),
            np.asarray(self.spec.radii, dtype="<f8").tobytes(),
        ]
        for c in centers:
            parts.append(_CENTER.pack(c.cell, c.f, c.delta))
            parts.append(np.asarray(c.phi, dtype="<f8").tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes, grid: GridConfig) -> "Ringsum":
        if len(data) < _HEADER.size:
            raise SnapshotError("truncated Ringsum header")
        (magic, version, capacity, R, code, tcode, frozen, theta, expected, n, tsum_n,
         count) = _HEADER.unpack_from(data)
        if magic != _MAGIC or version != _VERSION:
            raise SnapshotError(f"not a Ringsum record (magic={magic!r}, version={version})")
        record = _CENTER.size + 8 * R
        if len(data) != _HEADER.size + 8 * R + count * record:
            raise SnapshotError("Ringsum record length mismatch")
        off = _HEADER.size
        spec = RingSpec(tuple(np.frombuffer(data, dtype="<f8", count=R, offset=off).tolist()))
        off += 8 * R
        strategy = list(Strategy)[code]
        rs = cls(capacity, spec, grid, strategy, theta, expected or None, TRANSFERS[tcode])
        counters, phis = [], []
        for _ in range(count):
            cell, f, delta = _CENTER.unpack_from(data, off)
            off += _CENTER.size
            phis.append(np.frombuffer(data, dtype="<f8", count=R, offset=off).copy())
            off += 8 * R
            counters.append(Counter(cell, f, delta))
        rs.tsum = Tsum.from_counters(capacity, counters, tsum_n)
        for slot, (c, phi) in enumerate(zip(counters, phis)):
            rs._assign(slot, c.cell)
            rs._phi[slot] = phi
        rs.n = n
        rs.frozen = bool(frozen)
        return rs

    def to_csv(self) -> str:
        buf = io.StringIO()
        radii = " ".join(repr(r) for r in self.spec.radii_km)
        buf.write(f"# m={self.capacity} R={self.spec.R} strategy={self.strategy.value} "
                  f"transfer={self.transfer} n={self.n} radii={radii}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["cell_id", "f", "delta", *[f"phi_{i + 1}" for i in range(self.spec.R)]])
        for c in self.centers():
            w.writerow([c.cell, c.f, c.delta, *[repr(float(v)) for v in c.phi]])
        return buf.getvalue()
