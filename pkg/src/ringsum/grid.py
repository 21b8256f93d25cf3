"""Uniform lat/lon grid, great-circle distances, and ring-band geometry.

Every location in the package is a cell of a :class:`GridConfig`. Distances
are always measured between cell centers with the haversine formula on a
sphere of radius :data:`EARTH_RADIUS_KM`.
"""

from __future__ import annotations

import bisect
import hashlib
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path

import numpy as np

from .errors import InvalidSpecError, OutOfExtentError, SnapshotError

EARTH_RADIUS_KM = 6371.0

_TABLE_MAGIC = b"RCTB"
_TABLE_VERSION = 1
_TABLE_HEADER = struct.Struct("<4sH32sII")


@dataclass(frozen=True)
class GridConfig:
    """A uniform grid of ``cell_size_deg`` cells over a lat/lon box.

    Both spans must be whole multiples of the cell size, so every cell is a
    full box and its center lies inside the extent.
    """

    cell_size_deg: float = 1.0
    lat_min: float = -90.0
    lat_max: float = 90.0
    lon_min: float = -180.0
    lon_max: float = 180.0
    n_rows: int = field(init=False)
    n_cols: int = field(init=False)

    def __post_init__(self):
        cs = self.cell_size_deg
        if not cs > 0:
            raise InvalidSpecError(f"cell size must be positive, got {cs}")
        if not (-90.0 <= self.lat_min < self.lat_max <= 90.0):
            raise InvalidSpecError("latitude extent must satisfy -90 <= lat_min < lat_max <= 90")
        if not (self.lon_min < self.lon_max and self.lon_max - self.lon_min <= 360.0):
            raise InvalidSpecError("longitude extent must satisfy lon_min < lon_max, span <= 360")
        rows = (self.lat_max - self.lat_min) / cs
        cols = (self.lon_max - self.lon_min) / cs
        for name, span in (("latitude", rows), ("longitude", cols)):
            if abs(span - round(span)) > 1e-9:
                raise InvalidSpecError(f"{name} span is not a multiple of the cell size {cs}")
        object.__setattr__(self, "n_rows", max(1, math.ceil(round(rows, 9))))
        object.__setattr__(self, "n_cols", max(1, math.ceil(round(cols, 9))))

    @classmethod
    def global_grid(cls, cell_size_deg: float = 1.0) -> "GridConfig":
        return cls(cell_size_deg)

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def extent(self) -> tuple[float, float, float, float]:
        return (self.lat_min, self.lat_max, self.lon_min, self.lon_max)

    def content_key(self) -> str:
        return "grid:" + ",".join(float(v).hex() for v in (self.cell_size_deg, *self.extent))

    # Per-cell coordinate arrays, in radians. Row r of the grid has latitude
    # lat_rad[r]; the longitude offset between columns is dcol * step_rad.
    @cached_property
    def row_lat_rad(self) -> np.ndarray:
        rows = np.arange(self.n_rows)
        return np.radians(self.lat_min + (rows + 0.5) * self.cell_size_deg)

    @cached_property
    def row_cos_lat(self) -> np.ndarray:
        return np.cos(self.row_lat_rad)

    @cached_property
    def step_rad(self) -> float:
        return math.radians(self.cell_size_deg)

    @cached_property
    def cell_rows(self) -> np.ndarray:
        return np.arange(self.n_cells) // self.n_cols

    @cached_property
    def cell_cols(self) -> np.ndarray:
        return np.arange(self.n_cells) % self.n_cols

    @cached_property
    def center_lats(self) -> np.ndarray:
        return self.lat_min + (self.cell_rows + 0.5) * self.cell_size_deg

    @cached_property
    def center_lons(self) -> np.ndarray:
        return self.lon_min + (self.cell_cols + 0.5) * self.cell_size_deg

    @cached_property
    def d_min_km(self) -> float:
        """Half the diagonal of one cell at the equator.

        Stands in for the distance of the center cell from itself, where the
        power law diverges.
        """
        h = math.radians(self.cell_size_deg / 2)
        return _haversine_scalar(-h, -h, h, h) / 2


def _haversine_scalar(lat1: float, lon1: float, lat2: float, lon2: float) -> float:
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(min(h, 1.0)))


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km between points given in degrees (broadcasts)."""
    lat1, lon1, lat2, lon2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


def _grid_haversine(lat_a, cos_a, lat_b, cos_b, dlon):
    # Single expression shared by every distance path so that the ring-cell
    # table and the online ring updates classify identical pairs identically.
    h = np.sin((lat_b - lat_a) / 2) ** 2 + cos_a * cos_b * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.minimum(h, 1.0)))


def cell_of(lat: float, lon: float, cfg: GridConfig) -> int:
    """Index of the cell containing ``(lat, lon)``; the upper boundary clamps in."""
    if not (cfg.lat_min <= lat <= cfg.lat_max and cfg.lon_min <= lon <= cfg.lon_max):
        raise OutOfExtentError(f"({lat}, {lon}) outside extent {cfg.extent}")
    row = min(int(math.floor((lat - cfg.lat_min) / cfg.cell_size_deg)), cfg.n_rows - 1)
    col = min(int(math.floor((lon - cfg.lon_min) / cfg.cell_size_deg)), cfg.n_cols - 1)
    return row * cfg.n_cols + col


def cells_of(lats, lons, cfg: GridConfig) -> np.ndarray:
    """Vectorized :func:`cell_of`. Raises if any point is out of extent."""
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    bad = (lats < cfg.lat_min) | (lats > cfg.lat_max) | (lons < cfg.lon_min) | (lons > cfg.lon_max)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise OutOfExtentError(f"({lats[i]}, {lons[i]}) outside extent {cfg.extent}")
    rows = np.minimum(np.floor((lats - cfg.lat_min) / cfg.cell_size_deg).astype(np.int64), cfg.n_rows - 1)
    cols = np.minimum(np.floor((lons - cfg.lon_min) / cfg.cell_size_deg).astype(np.int64), cfg.n_cols - 1)
    return rows * cfg.n_cols + cols


def _check_cell(c: int, cfg: GridConfig) -> int:
    c = int(c)
    if not 0 <= c < cfg.n_cells:
        raise InvalidSpecError(f"cell {c} outside grid of {cfg.n_cells} cells")
    return c


def cell_center(c: int, cfg: GridConfig) -> tuple[float, float]:
    c = _check_cell(c, cfg)
    row, col = divmod(c, cfg.n_cols)
    cs = cfg.cell_size_deg
    return (cfg.lat_min + (row + 0.5) * cs, cfg.lon_min + (col + 0.5) * cs)


def distances_from(c: int, cfg: GridConfig, cells=None) -> np.ndarray:
    """Great-circle km from cell ``c`` to ``cells`` (all cells when omitted)."""
    c = _check_cell(c, cfg)
    row, col = divmod(c, cfg.n_cols)
    if cells is None:
        rows, cols = cfg.cell_rows, cfg.cell_cols
    else:
        cells = np.asarray(cells, dtype=np.int64)
        rows, cols = cells // cfg.n_cols, cells % cfg.n_cols
    return _grid_haversine(
        cfg.row_lat_rad[row], cfg.row_cos_lat[row],
        cfg.row_lat_rad[rows], cfg.row_cos_lat[rows],
        (cols - col) * cfg.step_rad,
    )


def great_circle_km(a: int, b: int, cfg: GridConfig) -> float:
    a, b = _check_cell(a, cfg), _check_cell(b, cfg)
    if a == b:
        return 0.0
    (ra, ca), (rb, cb) = divmod(a, cfg.n_cols), divmod(b, cfg.n_cols)
    return _row_pair_km(cfg, ra, rb, cb - ca)


@lru_cache(maxsize=1 << 18)
def _row_pair_km(cfg: GridConfig, row_a: int, row_b: int, dcol: int) -> float:
    return float(_grid_haversine(cfg.row_lat_rad[row_a], cfg.row_cos_lat[row_a],
                                 cfg.row_lat_rad[np.array([row_b])], cfg.row_cos_lat[np.array([row_b])],
                                 np.array([dcol]) * cfg.step_rad)[0])


def max_cell_distance_km(cfg: GridConfig) -> float:
    """Largest center-to-center distance in the grid (the default ``D``)."""
    dcols = np.arange(-(cfg.n_cols - 1), cfg.n_cols)
    best = 0.0
    for row in range(cfg.n_rows):
        d = _grid_haversine(
            cfg.row_lat_rad[row], cfg.row_cos_lat[row],
            cfg.row_lat_rad[:, None], cfg.row_cos_lat[:, None],
            dcols[None, :] * cfg.step_rad,
        )
        best = max(best, float(d.max()))
    return best


@dataclass(frozen=True)
class RingSpec:
    """Ring outer radii ``d_1 < ... < d_R`` in km; ring i is ``(d_{i-1}, d_i]``."""

    radii_km: tuple[float, ...]

    def __post_init__(self):
        radii = tuple(float(r) for r in self.radii_km)
        if not radii:
            raise InvalidSpecError("a ring spec needs at least one radius")
        if radii[0] <= 0 or any(b <= a for a, b in zip(radii, radii[1:])):
            raise InvalidSpecError(f"ring radii must be positive and strictly increasing: {radii}")
        object.__setattr__(self, "radii_km", radii)

    @property
    def R(self) -> int:
        return len(self.radii_km)

    @property
    def D(self) -> float:
        return self.radii_km[-1]

    @cached_property
    def radii(self) -> np.ndarray:
        return np.array(self.radii_km)

    @cached_property
    def inner_km(self) -> np.ndarray:
        return np.concatenate(([0.0], self.radii[:-1]))

    @cached_property
    def d_exp(self) -> np.ndarray:
        """Representative distance of each ring: the midpoint of its band."""
        return (self.inner_km + self.radii) / 2

    @cached_property
    def ring_areas(self) -> np.ndarray:
        return math.pi * (self.radii**2 - self.inner_km**2)

    def content_key(self) -> str:
        return "rings:" + ",".join(r.hex() for r in self.radii_km)


def make_ring_spec(ratio: float, D_km: float, min_radius_km: float, max_rings: int = 10) -> RingSpec:
    """Geometric ring radii ``D, r*D, r^2*D, ...`` down to ``min_radius_km``.

    At most ``max_rings`` radii are kept, starting from the outermost.
    """
    if not 0 < ratio < 1:
        raise InvalidSpecError(f"ring ratio must lie in (0, 1), got {ratio}")
    if not (min_radius_km > 0 and D_km > min_radius_km):
        raise InvalidSpecError(f"need D > min radius > 0, got D={D_km}, min={min_radius_km}")
    if max_rings < 1:
        raise InvalidSpecError("max_rings must be at least 1")
    radii = []
    k = 0
    while len(radii) < max_rings:
        rad = D_km * ratio**k
        if rad < min_radius_km:
            break
        radii.append(rad)
        k += 1
    return RingSpec(tuple(sorted(radii)))


def default_ring_spec(cfg: GridConfig, ratio: float = 0.6, max_rings: int = 10, D_km: float | None = None,
                      min_radius_km: float | None = None) -> RingSpec:
    D = max_cell_distance_km(cfg) if D_km is None else D_km
    return make_ring_spec(ratio, D, cfg.d_min_km if min_radius_km is None else min_radius_km, max_rings)


def ring_index(d_km: float, spec: RingSpec) -> int | None:
    """1-based ring containing distance ``d_km``, or None at 0 or beyond ``D``."""
    if d_km <= 0:
        return None
    i = bisect.bisect_left(spec.radii_km, d_km)
    return i + 1 if i < spec.R else None


def ring_indices(d_km, spec: RingSpec) -> np.ndarray:
    """Vectorized :func:`ring_index`; 0 stands for "no ring"."""
    shape = np.shape(d_km)
    d = np.atleast_1d(np.asarray(d_km, dtype=float))
    idx = np.searchsorted(spec.radii, d, side="left") + 1
    idx[(d <= 0) | (idx > spec.R)] = 0
    return idx.reshape(shape)


@dataclass(frozen=True, eq=False)
class RingCellTable:
    """Number of grid cells in each ring around every center cell.

    ``counts[c, i]`` is the cell count of ring ``i + 1`` around cell ``c``.
    """

    counts: np.ndarray
    key: str

    @property
    def R(self) -> int:
        return self.counts.shape[1]

    def row(self, c: int) -> np.ndarray:
        return self.counts[int(c)]


def table_key(cfg: GridConfig, spec: RingSpec) -> str:
    return hashlib.sha256(f"{cfg.content_key()}|{spec.content_key()}".encode()).hexdigest()


def _compute_ring_counts(cfg: GridConfig, spec: RingSpec) -> np.ndarray:
    n_rows, n_cols, R = cfg.n_rows, cfg.n_cols, spec.R
    width = 2 * n_cols - 1
    dcols = np.arange(-(n_cols - 1), n_cols)
    counts = np.zeros((cfg.n_cells, R), dtype=np.uint32)
    # Distances depend only on (center row, target row, column offset), so one
    # row of centers shares a single (n_rows x width) distance block.
    cc = np.arange(n_cols)
    hi = width - cc
    lo = n_cols - 1 - cc
    for row in range(n_rows):
        d = _grid_haversine(
            cfg.row_lat_rad[row], cfg.row_cos_lat[row],
            cfg.row_lat_rad[:, None], cfg.row_cos_lat[:, None],
            dcols[None, :] * cfg.step_rad,
        )
        ring = ring_indices(d.ravel(), spec).reshape(d.shape)
        flat = ring * width + np.arange(width)[None, :]
        per_offset = np.bincount(flat.ravel(), minlength=(R + 1) * width).reshape(R + 1, width)[1:]
        csum = np.concatenate((np.zeros((R, 1), dtype=np.int64), np.cumsum(per_offset, axis=1)), axis=1)
        # Center column c sees offsets [-c, n_cols-1-c], i.e. block columns [lo, hi).
        counts[row * n_cols:(row + 1) * n_cols] = (csum[:, hi] - csum[:, lo]).T
    return counts


@lru_cache(maxsize=8)
def ring_lookup(cfg: GridConfig, spec: RingSpec) -> np.ndarray:
    """Ring ordinal (0 = none) indexed by ``[center row, target row, dcol + n_cols - 1]``.

    Uses the same distance expression as the ring-cell table, so online ring
    updates and the table classify every cell pair identically.
    """
    dcols = np.arange(-(cfg.n_cols - 1), cfg.n_cols)
    out = np.empty((cfg.n_rows, cfg.n_rows, dcols.size), dtype=np.uint8)
    for row in range(cfg.n_rows):
        d = _grid_haversine(
            cfg.row_lat_rad[row], cfg.row_cos_lat[row],
            cfg.row_lat_rad[:, None], cfg.row_cos_lat[:, None],
            dcols[None, :] * cfg.step_rad,
        )
        out[row] = ring_indices(d.ravel(), spec).reshape(d.shape)
    out.setflags(write=False)
    return out


def rings_around(c: int, cfg: GridConfig, spec: RingSpec) -> np.ndarray:
    """Ring ordinal (0 = none) of every grid cell around center ``c``, as an (n_rows, n_cols) view."""
    row, col = divmod(_check_cell(c, cfg), cfg.n_cols)
    start = cfg.n_cols - 1 - col
    return ring_lookup(cfg, spec)[row, :, start:start + cfg.n_cols]


def cell_transfer_matrix(old: int, new: int, cfg: GridConfig, spec: RingSpec) -> np.ndarray:
    """``F[i, k]``: share of the cells of old ring k that lie in new ring i.

    The grid-cell counterpart of :func:`ring_transfer_matrix`: cells stand in
    for area, so the ratios stay valid for rings spanning the whole sphere.
    Identical centers give the identity, including rings that hold no cells.
    """
    if int(old) == int(new):
        return np.eye(spec.R)
    return _cached_cell_transfer(int(old), int(new), cfg, spec).copy()


@lru_cache(maxsize=4096)
def _cached_cell_transfer(old: int, new: int, cfg: GridConfig, spec: RingSpec) -> np.ndarray:
    R1 = spec.R + 1
    # R1**2 <= 121 for the usual R <= 10, so the pair code fits in a byte.
    dtype = np.uint8 if R1 * R1 <= 256 else np.uint16
    code = rings_around(new, cfg, spec).astype(dtype) * dtype(R1) + rings_around(old, cfg, spec)
    joint = np.bincount(code.ravel(), minlength=R1 * R1).reshape(R1, R1)
    per_old = joint.sum(axis=0)[1:]
    out = joint[1:, 1:] / np.maximum(per_old, 1)[None, :]
    out.setflags(write=False)
    return out


def build_ring_cell_table(cfg: GridConfig, spec: RingSpec, cache_dir: str | Path | None = None) -> RingCellTable:
    """Build (or load from ``cache_dir``) the per-center ring cell counts."""
    key = table_key(cfg, spec)
    path = Path(cache_dir) / f"ringtable-{key[:20]}.bin" if cache_dir is not None else None
    if path is not None and path.exists():
        try:
            return read_ring_cell_table(path, expected_key=key)
        except SnapshotError:
            pass
    table = RingCellTable(_compute_ring_counts(cfg, spec), key)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        write_ring_cell_table(table, path)
    return table


def write_ring_cell_table(table: RingCellTable, path: str | Path) -> None:
    n_cells, R = table.counts.shape
    header = _TABLE_HEADER.pack(_TABLE_MAGIC, _TABLE_VERSION, bytes.fromhex(table.key), R, n_cells)
    tmp = Path(str(path) + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(table.counts, dtype="<u4").tobytes())
    tmp.replace(path)


def read_ring_cell_table(path: str | Path, expected_key: str | None = None) -> RingCellTable:
    data = Path(path).read_bytes()
    if len(data) < _TABLE_HEADER.size:
        raise SnapshotError(f"{path}: truncated ring table header")
    magic, version, key, R, n_cells = _TABLE_HEADER.unpack_from(data)
    if magic != _TABLE_MAGIC or version != _TABLE_VERSION:
        raise SnapshotError(f"{path}: not a ring table (magic={magic!r}, version={version})")
    if expected_key is not None and key.hex() != expected_key:
        raise SnapshotError(f"{path}: ring table built for a different grid/spec")
    body = data[_TABLE_HEADER.size:]
    if len(body) != 4 * R * n_cells:
        raise SnapshotError(f"{path}: expected {R * n_cells} counts")
    counts = np.frombuffer(body, dtype="<u4").reshape(n_cells, R).astype(np.uint32)
    return RingCellTable(counts, key.hex())


# Planar annulus geometry. Ring transfers only need area ratios, and rings are
# treated on the local tangent plane of the two centers.

def _segment_area(r, t):
    """Area of a circular segment of radius ``r`` with central angle ``t``: r^2 (t - sin t) / 2."""
    small = t < 1e-2
    t2 = t * t
    series = t * t2 / 6 * (1 - t2 / 20 * (1 - t2 / 42))
    return 0.5 * r * r * np.where(small, series, t - np.sin(t))


def disk_overlap_area(r1, r2, s):
    """Area of the intersection of two disks of radii r1, r2 with centers s apart."""
    r1, r2, s = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (r1, r2, s)))
    out = np.zeros(r1.shape)
    small = np.minimum(r1, r2)
    contained = (s <= np.abs(r1 - r2)) & (small > 0)
    out[contained] = math.pi * small[contained] ** 2
    lens = (s < r1 + r2) & ~contained & (small > 0)
    if np.any(lens):
        a, b, d = r1[lens], r2[lens], s[lens]
        # Signed distances from each center to the common chord, written to
        # avoid cancelling squares near tangency.
        x1 = ((d - b) * (d + b) + a * a) / (2 * d)
        x2 = ((d - a) * (d + a) + b * b) / (2 * d)
        h = np.sqrt(np.maximum((a - x1) * (a + x1), 0.0))
        out[lens] = _segment_area(a, 2 * np.arctan2(h, x1)) + _segment_area(b, 2 * np.arctan2(h, x2))
    return out if out.ndim else float(out)


def annulus_overlap_area(s, inner1, outer1, inner2, outer2):
    """Intersection area of two annuli whose centers are ``s`` km apart."""
    area = (disk_overlap_area(outer1, outer2, s) - disk_overlap_area(inner1, outer2, s)
            - disk_overlap_area(outer1, inner2, s) + disk_overlap_area(inner1, inner2, s))
    return np.maximum(area, 0.0) if np.ndim(area) else max(float(area), 0.0)


def annulus_intersection_area(center1: int, inner1_km: float, outer1_km: float,
                              center2: int, inner2_km: float, outer2_km: float,
                              cfg: GridConfig) -> float:
    for inner, outer in ((inner1_km, outer1_km), (inner2_km, outer2_km)):
        if not 0 <= inner < outer:
            raise InvalidSpecError(f"annulus needs 0 <= inner < outer, got ({inner}, {outer})")
    s = great_circle_km(center1, center2, cfg)
    return annulus_overlap_area(s, inner1_km, outer1_km, inner2_km, outer2_km)


def ring_overlap_matrix(s: float, spec: RingSpec) -> np.ndarray:
    """``M[i, k]`` = area of (new ring i) ∩ (old ring k) for centers ``s`` km apart."""
    edges = np.concatenate(([0.0], spec.radii))
    disk = disk_overlap_area(edges[:, None], edges[None, :], s)
    return disk[1:, 1:] - disk[:-1, 1:] - disk[1:, :-1] + disk[:-1, :-1]


def ring_transfer_matrix(s: float, spec: RingSpec) -> np.ndarray:
    """Fraction of each old ring's area that falls in each new ring."""
    return _cached_transfer(float(s), spec).copy()


@lru_cache(maxsize=65536)
def _cached_transfer(s: float, spec: RingSpec) -> np.ndarray:
    # Center separations on a grid take few distinct values, so evictions
    # mostly hit this cache.
    out = np.maximum(ring_overlap_matrix(s, spec), 0.0) / spec.ring_areas[None, :]
    out.setflags(write=False)
    return out
