"""Single- and multi-term RFS/TFS queries over a registry of summaries."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSpecError, NotMonitoredError
from .grid import cell_center
from .ingest import Registry
from .model import (ModelParams, best_model, expected_frequency, fit_all, full_terms, probability_at,
                    probability_map, ring_terms)
from .ringsum import Ringsum
from .tsum import Tsum

MODES = ("independent", "min_bound")
RESULT_CSV_HEADER = ["rank", "cell_id", "lat", "lon", "score", "delta"]


@dataclass(frozen=True)
class QueryEntry:
    cell: int
    score: float
    delta: int | None = None


@dataclass
class QueryResult:
    entries: list[QueryEntry]
    backend: str
    params: dict[str, list[ModelParams]] = field(default_factory=dict)
    truncated: bool = False

    @property
    def cells(self) -> list[int]:
        return [e.cell for e in self.entries]

    def to_csv(self, registry: Registry) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RESULT_CSV_HEADER)
        for rank, e in enumerate(self.entries, start=1):
            lat, lon = cell_center(e.cell, registry.grid)
            w.writerow([rank, e.cell, repr(lat), repr(lon), repr(float(e.score)), "" if e.delta is None else e.delta])
        return buf.getvalue()


@dataclass(frozen=True)
class TfsResult:
    term: str
    cell: int
    estimate: float
    stored: bool
    delta: int | None
    upper_bound: int
    params: ModelParams | None = None


def _ranked(scores: np.ndarray, k: int) -> list[QueryEntry]:
    # Score descending, then cell id ascending; lexsort sorts by its last key first.
    cells = np.arange(scores.size)
    order = np.lexsort((cells, -scores))[:k]
    return [QueryEntry(int(c), float(scores[c])) for c in order]


class QueryEngine:
    """Answers queries against a registry; fitted models are memoized per summary version.

    Queries never mutate summaries. With ``memo=False`` every model-backed
    query refits from scratch, which is what timing runs want.
    """

    def __init__(self, registry: Registry, memo: bool = True):
        self.registry = registry
        self.memo = memo
        self._fits: dict[tuple, list[ModelParams]] = {}

    def _summary(self, term: str) -> Tsum | Ringsum:
        s = self.registry.get(term)
        if s is None:
            raise NotMonitoredError(f"term {term!r} has no summary")
        return s

    # Model fitting

    def _candidates(self, summary, k: int | None):
        grid = self.registry.grid
        if isinstance(summary, Ringsum):
            table = self.registry.table
            centers = summary.centers() if k is None else summary.top_k(k)
            return [(c.cell, ring_terms(summary.ring_lik_input(c, table))) for c in centers]
        counters = summary.counters()
        counts = {c.cell: c.f for c in counters}
        chosen = counters if k is None else counters[:k]
        return [(c.cell, full_terms(counts, grid, c.cell)) for c in chosen]

    def models(self, term: str, k: int | None = None) -> list[ModelParams]:
        """One fitted model per candidate center: all stored cells, or the top ``k``."""
        summary = self._summary(term)
        key = (term, self.registry.backend, summary.n, k)
        if self.memo and key in self._fits:
            return self._fits[key]
        out = fit_all(self._candidates(summary, k)) if len(summary) else []
        if self.memo:
            self._fits[key] = out
        return out

    def model(self, term: str) -> ModelParams:
        return best_model(self.models(term))

    # Single-term queries

    def rfs(self, term: str, k: int) -> QueryResult:
        if k < 1:
            raise InvalidSpecError("k must be at least 1")
        summary = self._summary(term)
        top = summary.top_k(k)
        return QueryResult([QueryEntry(c.cell, c.f, c.delta) for c in top], self.registry.backend,
                           truncated=k > summary.capacity)

    def tfs(self, term: str, cell: int) -> TfsResult:
        summary = self._summary(term)
        cell = int(cell)
        stored = summary.tsum.get(cell) if isinstance(summary, Ringsum) else summary.get(cell)
        if stored is not None:
            return TfsResult(term, cell, float(stored.f), True, stored.delta, stored.f)
        bound = summary.frequency_upper_bound(cell)
        if not len(summary):
            return TfsResult(term, cell, 0.0, False, None, bound)
        params = self.model(term)
        est = expected_frequency(params, summary.total_frequency(), cell, self.registry.grid)
        return TfsResult(term, cell, est, False, None, bound, params)

    # Multi-term queries

    def _check_terms(self, terms, mode):
        if len(terms) < 2:
            raise InvalidSpecError("a multi-term query needs at least two terms")
        if mode not in MODES:
            raise InvalidSpecError(f"unknown mode {mode!r}; expected one of {MODES}")
        for t in terms:
            self._summary(t)

    def term_probability(self, term: str, k: int) -> np.ndarray:
        """Per-cell probability of ``term``: the best of its top-``k`` center models."""
        grid = self.registry.grid
        models = self.models(term, k)
        if not models:
            return np.zeros(grid.n_cells)
        return np.max([probability_map(m, grid) for m in models], axis=0)

    def joint_probability(self, terms, k: int, mode: str = "independent") -> np.ndarray:
        self._check_terms(terms, mode)
        maps = [self.term_probability(t, k) for t in terms]
        return np.prod(maps, axis=0) if mode == "independent" else np.min(maps, axis=0)

    def multi_rfs(self, terms, k: int, mode: str = "independent") -> QueryResult:
        if k < 1:
            raise InvalidSpecError("k must be at least 1")
        joint = self.joint_probability(terms, k, mode)
        params = {t: self.models(t, k) for t in terms}
        return QueryResult(_ranked(joint, k), self.registry.backend, params)

    def multi_tfs(self, terms, cell: int, k: int, mode: str = "independent") -> float:
        self._check_terms(terms, mode)
        f_min = min(self._summary(t).total_frequency() for t in terms)
        if f_min == 0:
            return 0.0
        grid = self.registry.grid
        probs = []
        for t in terms:
            models = self.models(t, k)
            probs.append(max((probability_at(m, cell, grid) for m in models), default=0.0))
        joint = math.prod(probs) if mode == "independent" else min(probs)
        return joint * f_min

    def intersection(self, terms, k: int) -> QueryResult:
        """Baseline: cells stored in every term's summary, scored by their smallest count."""
        if len(terms) < 2:
            raise InvalidSpecError("a multi-term query needs at least two terms")
        stored = []
        for t in terms:
            s = self._summary(t)
            counters = s.tsum.counters() if isinstance(s, Ringsum) else s.counters()
            stored.append({c.cell: c.f for c in counters})
        common = set(stored[0]).intersection(*stored[1:])
        scored = sorted(((min(d[c] for d in stored), c) for c in common), key=lambda x: (-x[0], x[1]))
        return QueryResult([QueryEntry(c, f) for f, c in scored[:k]], self.registry.backend)
