"""Event parsing, tokenization, and the per-term summary registry."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import InvalidSpecError, OutOfExtentError, ParseError, SnapshotError
from .grid import GridConfig, RingCellTable, RingSpec, build_ring_cell_table, cell_of, default_ring_spec
from .ringsum import TRANSFERS, Ringsum, Strategy
from .tsum import Tsum

BACKENDS = ("ringsum", "tsum_plus")
DEFAULT_M = {"ringsum": 50, "tsum_plus": 216}
MANIFEST = "manifest.json"
SNAPSHOT_FORMAT = 1

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class Event:
    terms: tuple[str, ...]
    lat: float
    lon: float
    ts: float | None = None


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop 1-char tokens, keep first occurrence only."""
    out: dict[str, None] = {}
    for tok in _SPLIT.split(text.lower()):
        if len(tok) >= 2:
            out.setdefault(tok)
    return list(out)


def _normalize_terms(terms) -> list[str]:
    out: dict[str, None] = {}
    for t in terms:
        t = t.strip().lower()
        if t:
            out.setdefault(t)
    return list(out)


def _number(rec: dict, key: str, line_no, required: bool = True) -> float | None:
    v = rec.get(key)
    if v is None:
        if required:
            raise ParseError(f"missing field {key!r}", line_no)
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ParseError(f"field {key!r} must be a finite number, got {v!r}", line_no)
    return float(v)


def parse_event(line: str, line_no: int | None = None) -> Event:
    """Parse one JSON-lines record carrying ``text`` or ``terms`` plus ``lat``/``lon``."""
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line_no) from None
    if not isinstance(rec, dict):
        raise ParseError("record must be a JSON object", line_no)
    if "terms" in rec:
        terms = rec["terms"]
        if not isinstance(terms, list) or not all(isinstance(t, str) for t in terms):
            raise ParseError("'terms' must be a list of strings", line_no)
        terms = _normalize_terms(terms)
    elif "text" in rec:
        if not isinstance(rec["text"], str):
            raise ParseError("'text' must be a string", line_no)
        terms = tokenize(rec["text"])
    else:
        raise ParseError("record needs 'text' or 'terms'", line_no)
    return Event(tuple(terms), _number(rec, "lat", line_no), _number(rec, "lon", line_no),
                 _number(rec, "ts", line_no, required=False))


def parse_csv_row(row: list[str], line_no: int | None = None) -> Event:
    """CSV fallback: one ``term,lat,lon`` occurrence per row."""
    if len(row) != 3:
        raise ParseError(f"expected 3 columns term,lat,lon, got {len(row)}", line_no)
    try:
        lat, lon = float(row[1]), float(row[2])
    except ValueError:
        raise ParseError(f"non-numeric coordinates {row[1]!r}, {row[2]!r}", line_no) from None
    if not (math.isfinite(lat) and math.isfinite(lon)):
        raise ParseError("coordinates must be finite", line_no)
    return Event(tuple(_normalize_terms([row[0]])), lat, lon)


def read_events(path: str | Path) -> Iterator[Event]:
    """Events from a JSON-lines file, or from ``term,lat,lon`` CSV when the suffix is .csv."""
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        if path.suffix.lower() == ".csv":
            for i, row in enumerate(csv.reader(fh), start=1):
                if not row or (i == 1 and [c.strip().lower() for c in row] == ["term", "lat", "lon"]):
                    continue
                yield parse_csv_row(row, i)
        else:
            for i, line in enumerate(fh, start=1):
                if line.strip():
                    yield parse_event(line, i)


@dataclass(frozen=True)
class RegistryConfig:
    backend: str = "ringsum"
    m: int | None = None
    ratio: float = 0.6
    max_rings: int = 10
    D_km: float | None = None
    min_radius_km: float | None = None
    strategy: str = "standard"
    theta: float = 0.2
    expected_total_len: int | None = None
    transfer: str = "cells"
    grid: GridConfig = field(default_factory=GridConfig)

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise InvalidSpecError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.m is None:
            object.__setattr__(self, "m", DEFAULT_M[self.backend])
        if self.m < 1:
            raise InvalidSpecError(f"m must be at least 1, got {self.m}")
        try:
            strategy = Strategy(self.strategy)
        except ValueError:
            raise InvalidSpecError(f"unknown strategy {self.strategy!r}") from None
        if self.backend == "ringsum" and strategy is Strategy.FIXED_CENTER and not self.expected_total_len:
            raise InvalidSpecError("fixed_center needs expected_total_len")
        if self.transfer not in TRANSFERS:
            raise InvalidSpecError(f"unknown transfer {self.transfer!r}; expected one of {TRANSFERS}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {k: getattr(self.grid, k) for k in ("cell_size_deg", "lat_min", "lat_max", "lon_min", "lon_max")}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegistryConfig":
        d = dict(d)
        d["grid"] = GridConfig(**d.get("grid", {}))
        return cls(**d)


class Registry:
    """Routes each (term, cell) occurrence to that term's summary, created on first sight."""

    def __init__(self, config: RegistryConfig | None = None, whitelist: Iterable[str] | None = None,
                 table_cache: str | Path | None = None):
        self.config = config or RegistryConfig()
        self.grid = self.config.grid
        self.whitelist = None if whitelist is None else frozenset(_normalize_terms(whitelist))
        self.table_cache = table_cache
        self.summaries: dict[str, Tsum | Ringsum] = {}
        self.n_events = 0
        self.rejected = 0
        self.empty = 0
        self._spec: RingSpec | None = None
        self._table: RingCellTable | None = None

    @property
    def backend(self) -> str:
        return self.config.backend

    @property
    def spec(self) -> RingSpec:
        if self._spec is None:
            c = self.config
            self._spec = default_ring_spec(self.grid, c.ratio, c.max_rings, c.D_km, c.min_radius_km)
        return self._spec

    @property
    def table(self) -> RingCellTable:
        if self._table is None:
            self._table = build_ring_cell_table(self.grid, self.spec, self.table_cache)
        return self._table

    def _new_summary(self) -> Tsum | Ringsum:
        c = self.config
        if c.backend == "tsum_plus":
            return Tsum(c.m)
        return Ringsum(c.m, self.spec, self.grid, c.strategy, c.theta, c.expected_total_len, c.transfer)

    def observe(self, ev: Event) -> bool:
        """Count one event; returns False if it was rejected or had no usable terms."""
        try:
            cell = cell_of(ev.lat, ev.lon, self.grid)
        except OutOfExtentError:
            self.rejected += 1
            return False
        terms = [t for t in ev.terms if self.whitelist is None or t in self.whitelist]
        if not ev.terms:
            self.empty += 1
            return False
        for t in terms:
            s = self.summaries.get(t)
            if s is None:
                s = self.summaries[t] = self._new_summary()
            s.update(cell)
        self.n_events += 1
        return True

    def ingest(self, events: Iterable[Event]) -> int:
        n = 0
        for ev in events:
            n += self.observe(ev)
        return n

    def get(self, term: str):
        return self.summaries.get(term.strip().lower())

    def total_frequency(self, term: str) -> int:
        s = self.get(term)
        return 0 if s is None else s.total_frequency()

    @property
    def version(self) -> int:
        return self.n_events

    # Snapshots

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        terms = {}
        for term in sorted(self.summaries):
            s = self.summaries[term]
            data = s.to_bytes()
            suffix = ".rsum" if isinstance(s, Ringsum) else ".tsum"
            name = hashlib.sha256(term.encode("utf-8")).hexdigest()[:24] + suffix
            (directory / name).write_bytes(data)
            terms[term] = {"file": name, "sha256": hashlib.sha256(data).hexdigest(), "total": s.total_frequency()}
        manifest = {
            "format": SNAPSHOT_FORMAT,
            "config": self.config.to_dict(),
            "whitelist": None if self.whitelist is None else sorted(self.whitelist),
            "n_events": self.n_events,
            "rejected": self.rejected,
            "empty": self.empty,
            "terms": terms,
        }
        (directory / MANIFEST).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        return directory

    @classmethod
    def load(cls, directory: str | Path, table_cache: str | Path | None = None) -> "Registry":
        directory = Path(directory)
        try:
            manifest = json.loads((directory / MANIFEST).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise SnapshotError(f"no snapshot manifest in {directory}") from None
        except json.JSONDecodeError as exc:
            raise SnapshotError(f"corrupt snapshot manifest: {exc.msg}") from None
        if manifest.get("format") != SNAPSHOT_FORMAT:
            raise SnapshotError(f"unsupported snapshot format {manifest.get('format')!r}")
        reg = cls(RegistryConfig.from_dict(manifest["config"]), manifest.get("whitelist"), table_cache)
        reg.n_events = manifest["n_events"]
        reg.rejected = manifest["rejected"]
        reg.empty = manifest.get("empty", 0)
        for term, meta in manifest["terms"].items():
            try:
                data = (directory / meta["file"]).read_bytes()
            except FileNotFoundError:
                raise SnapshotError(f"snapshot file for term {term!r} is missing") from None
            if hashlib.sha256(data).hexdigest() != meta["sha256"]:
                raise SnapshotError(f"snapshot file for term {term!r} fails its checksum")
            if meta["file"].endswith(".rsum"):
                reg.summaries[term] = Ringsum.from_bytes(data, reg.grid)
            else:
                reg.summaries[term] = Tsum.from_bytes(data)
        return reg
