"""Streaming per-term spatial summaries with power-law center models."""

from .errors import (FitError, InvalidSpecError, NotMonitoredError, OutOfExtentError, ParseError, RingsumError,
                     SnapshotError)
from .grid import (GridConfig, RingCellTable, RingSpec, build_ring_cell_table, cell_center, cell_of,
                   default_ring_spec, great_circle_km, haversine_km, make_ring_spec)
from .ingest import Event, Registry, RegistryConfig, parse_event, read_events, tokenize
from .model import ModelParams, expected_frequency, fit, probability_at, probability_map
from .query import QueryEngine, QueryResult, TfsResult
from .ringsum import Ringsum, Strategy
from .tsum import Counter, Tsum

__version__ = "0.1.0"

__all__ = [
    "Counter", "Event", "FitError", "GridConfig", "InvalidSpecError", "ModelParams", "NotMonitoredError",
    "OutOfExtentError", "ParseError", "QueryEngine", "QueryResult", "Registry", "RegistryConfig", "RingCellTable",
    "RingSpec", "Ringsum", "RingsumError", "SnapshotError", "Strategy", "TfsResult", "Tsum",
    "build_ring_cell_table", "cell_center", "cell_of", "default_ring_spec", "expected_frequency", "fit",
    "great_circle_km", "haversine_km", "make_ring_spec", "parse_event", "probability_at", "probability_map",
    "read_events", "tokenize",
]
