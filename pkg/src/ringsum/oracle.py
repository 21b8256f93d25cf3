"""Exact reference computations, synthetic streams, and the evaluation harness."""

from __future__ import annotations

import csv
import json
import math
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid import GridConfig, cell_center, cell_of
from .ingest import DEFAULT_M, Event, Registry, RegistryConfig, read_events
from .model import ModelParams, fit, full_terms, probability_map
from .query import MODES, QueryEngine

# Exact counts


@dataclass
class ExactCounts:
    counts: dict[str, dict[int, int]] = field(default_factory=dict)
    totals: dict[str, int] = field(default_factory=dict)

    def add(self, term: str, cell: int) -> None:
        cells = self.counts.setdefault(term, {})
        cells[cell] = cells.get(cell, 0) + 1
        self.totals[term] = self.totals.get(term, 0) + 1

    def dense(self, term: str, grid: GridConfig) -> np.ndarray:
        out = np.zeros(grid.n_cells)
        for cell, n in self.counts.get(term, {}).items():
            out[cell] = n
        return out


def exact_counts(events: Iterable[Event] | str | Path, grid: GridConfig) -> ExactCounts:
    """Per-term, per-cell occurrence counts with the registry's accounting rules."""
    if isinstance(events, (str, Path)):
        events = read_events(events)
    ec = ExactCounts()
    for ev in events:
        lat_ok = grid.lat_min <= ev.lat <= grid.lat_max
        lon_ok = grid.lon_min <= ev.lon <= grid.lon_max
        if not (lat_ok and lon_ok) or not ev.terms:
            continue
        cell = cell_of(ev.lat, ev.lon, grid)
        for t in ev.terms:
            ec.add(t, cell)
    return ec


def exact_fit(term: str, ec: ExactCounts, grid: GridConfig) -> ModelParams:
    """Full-likelihood fit over every cell where the term occurs."""
    counts = ec.counts[term]
    dense = ec.dense(term, grid)
    return fit((c, full_terms(dense, grid, c)) for c in sorted(counts))


def exact_joint_counts(events: Iterable[Event], terms: Sequence[str], grid: GridConfig) -> np.ndarray:
    """Per-cell number of events that contain every one of ``terms``."""
    out = np.zeros(grid.n_cells, dtype=np.int64)
    need = set(terms)
    for ev in events:
        if need.issubset(ev.terms):
            out[cell_of(ev.lat, ev.lon, grid)] += 1
    return out


# Synthetic streams


@dataclass(frozen=True)
class TermSpec:
    term: str
    center: int
    C: float
    alpha: float
    n: int


def model_weights(params: ModelParams, grid: GridConfig) -> np.ndarray:
    w = probability_map(params, grid)
    total = w.sum()
    if total <= 0:
        raise ValueError("model assigns zero weight to every cell")
    return w / total


def sample_cells(params: ModelParams, n: int, grid: GridConfig, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(grid.n_cells, size=n, p=model_weights(params, grid))


def _event_line(terms, cell: int, grid: GridConfig) -> str:
    lat, lon = cell_center(cell, grid)
    return json.dumps({"terms": list(terms), "lat": lat, "lon": lon}, separators=(",", ":"))


def gen_stream(params: ModelParams, n: int, seed: int, grid: GridConfig, term: str = "term") -> list[str]:
    """``n`` JSON-lines events for one term, cells drawn from the normalized model."""
    if n < 1:
        raise ValueError("n must be at least 1")
    cells = sample_cells(params, n, grid, np.random.default_rng(seed))
    return [_event_line([term], int(c), grid) for c in cells]


def gen_corpus(specs: Sequence[TermSpec], seed: int, grid: GridConfig,
               pairs: Sequence[tuple[str, str, int]] = ()) -> list[str]:
    """Interleaved events for several single-center terms, plus co-occurring pairs.

    Each ``(a, b, n)`` pair adds ``n`` events carrying both terms, placed by
    the normalized product of the two terms' models.
    """
    rng = np.random.default_rng(seed)
    by_term = {s.term: s for s in specs}
    items: list[tuple[tuple[str, ...], int]] = []
    for s in specs:
        cells = sample_cells(ModelParams(s.center, s.C, s.alpha), s.n, grid, rng)
        items.extend(((s.term,), int(c)) for c in cells)
    for a, b, n in pairs:
        sa, sb = by_term[a], by_term[b]
        w = model_weights(ModelParams(sa.center, sa.C, sa.alpha), grid) * \
            model_weights(ModelParams(sb.center, sb.C, sb.alpha), grid)
        cells = rng.choice(grid.n_cells, size=n, p=w / w.sum())
        items.extend(((a, b), int(c)) for c in cells)
    order = rng.permutation(len(items))
    return [_event_line(items[i][0], items[i][1], grid) for i in order]


def write_lines(lines: Sequence[str], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for line in lines:
            fh.write(line + "\n")
    return path


def random_term_specs(n_terms: int, seed: int, grid: GridConfig, n_range=(2000, 6000),
                      alpha_range=(0.8, 2.5), C: float = 0.3) -> list[TermSpec]:
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_terms):
        out.append(TermSpec(f"term{i:03d}", int(rng.integers(grid.n_cells)), C,
                            round(float(rng.uniform(*alpha_range)), 3), int(rng.integers(*n_range))))
    return out


# Evaluation


@dataclass(frozen=True)
class EvalConfig:
    """One summary configuration under evaluation."""

    backend: str = "ringsum"
    m: int | None = None
    ratio: float = 0.6
    max_rings: int = 10
    strategy: str = "standard"
    transfer: str = "cells"
    min_radius_km: float | None = None
    theta: float = 0.2

    @property
    def label(self) -> str:
        m = DEFAULT_M[self.backend] if self.m is None else self.m
        if self.backend == "tsum_plus":
            return f"tsum_plus(m={m})"
        tail = "" if self.transfer == "cells" else f",{self.transfer}"
        return f"ringsum(m={m},r={self.ratio},R<={self.max_rings},{self.strategy}{tail})"

    def registry(self, grid: GridConfig, expected_total_len: int | None = None) -> Registry:
        return Registry(RegistryConfig(
            backend=self.backend, m=self.m, ratio=self.ratio, max_rings=self.max_rings,
            min_radius_km=self.min_radius_km, strategy=self.strategy, theta=self.theta,
            expected_total_len=expected_total_len, transfer=self.transfer, grid=grid))


def _rel(est: float, true: float) -> float:
    return abs(est - true) / abs(true) if true else abs(est)


def _adjacent(a: int, b: int, grid: GridConfig) -> bool:
    (ra, ca), (rb, cb) = divmod(a, grid.n_cols), divmod(b, grid.n_cols)
    dc = abs(ca - cb)
    if grid.lon_max - grid.lon_min >= 360.0:
        dc = min(dc, grid.n_cols - dc)
    return abs(ra - rb) <= 1 and dc <= 1


MODEL_HEADER = ["term", "config", "backend", "m", "ratio", "rings", "strategy", "exact_center", "exact_C",
                "exact_alpha", "center", "C", "alpha", "C_rel_err", "alpha_rel_err", "center_match",
                "center_adjacent", "center_in_top_k"]


def eval_model_accuracy(events: Sequence[Event], grid: GridConfig, configs: Sequence[EvalConfig],
                        terms: Sequence[str] | None = None, top_k: int = 5,
                        exact: dict[str, ModelParams] | None = None) -> list[dict]:
    """Fit each term through each configuration and compare with the exact fit."""
    ec = exact_counts(events, grid)
    terms = sorted(ec.counts) if terms is None else list(terms)
    if exact is None:
        exact = {t: exact_fit(t, ec, grid) for t in terms}
    rows = []
    for cfg in configs:
        reg = cfg.registry(grid, expected_total_len=max(ec.totals.values(), default=1))
        reg.ingest(events)
        q = QueryEngine(reg)
        for t in terms:
            ex = exact[t]
            est = q.model(t)
            summary = reg.get(t)
            top = [c.cell for c in summary.top_k(top_k)]
            rows.append({
                "term": t, "config": cfg.label, "backend": cfg.backend, "m": reg.config.m,
                "ratio": cfg.ratio if cfg.backend == "ringsum" else "",
                "rings": reg.spec.R if cfg.backend == "ringsum" else 0,
                "strategy": cfg.strategy if cfg.backend == "ringsum" else "",
                "exact_center": ex.center, "exact_C": ex.C, "exact_alpha": ex.alpha,
                "center": est.center, "C": est.C, "alpha": est.alpha,
                "C_rel_err": _rel(est.C, ex.C), "alpha_rel_err": _rel(est.alpha, ex.alpha),
                "center_match": int(est.center == ex.center),
                "center_adjacent": int(_adjacent(est.center, ex.center, grid)),
                "center_in_top_k": int(ex.center in top),
            })
    return rows


def r_sweep_configs(m: int = 50, max_rings: int = 10, ratios=(0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9),
                    min_radius_km: float | None = None) -> list[EvalConfig]:
    return [EvalConfig("ringsum", m, r, max_rings, min_radius_km=min_radius_km) for r in ratios]


SUMMARY_HEADER = ["config", "backend", "m", "ratio", "rings", "strategy", "n_terms", "C_rel_err", "alpha_rel_err",
                  "center_accuracy", "center_adjacent_accuracy", "center_top_k_accuracy"]


def summarize_model_rows(rows: Sequence[dict]) -> list[dict]:
    """Per-configuration means of :func:`eval_model_accuracy` rows (accuracies in %)."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["config"], []).append(r)
    out = []
    for label, rs in groups.items():
        first = rs[0]
        out.append({
            "config": label, "backend": first["backend"], "m": first["m"], "ratio": first["ratio"],
            "rings": first["rings"], "strategy": first["strategy"], "n_terms": len(rs),
            "C_rel_err": statistics.fmean(r["C_rel_err"] for r in rs),
            "alpha_rel_err": statistics.fmean(r["alpha_rel_err"] for r in rs),
            "center_accuracy": 100.0 * statistics.fmean(r["center_match"] for r in rs),
            "center_adjacent_accuracy": 100.0 * statistics.fmean(r["center_adjacent"] for r in rs),
            "center_top_k_accuracy": 100.0 * statistics.fmean(r["center_in_top_k"] for r in rs),
        })
    return out


def log_error(est: float, actual: float) -> float:
    return abs(math.log10(est + 1.0) - math.log10(actual + 1.0))


def _neighbors(cell: int, grid: GridConfig) -> list[int]:
    row, col = divmod(cell, grid.n_cols)
    wrap = grid.lon_max - grid.lon_min >= 360.0
    out = []
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == dc == 0:
                continue
            r, c = row + dr, col + dc
            if wrap:
                c %= grid.n_cols
            if 0 <= r < grid.n_rows and 0 <= c < grid.n_cols:
                out.append(r * grid.n_cols + c)
    return out


def zero_fill(summary, cell: int) -> float:
    got = summary.get(cell)
    return float(got.f) if got is not None else 0.0


def neighbor_average(summary, cell: int, grid: GridConfig) -> float:
    """Stored count if present, else the mean stored count over the 8 neighbors (missing ones as 0)."""
    got = summary.get(cell)
    if got is not None:
        return float(got.f)
    vals = [summary.get(n) for n in _neighbors(cell, grid)]
    return sum(v.f for v in vals if v is not None) / max(len(vals), 1)


TFS_HEADER = ["method", "n_queries", "n_stored", "log_err_mean", "log_err_std"]


def eval_tfs(events: Sequence[Event], grid: GridConfig, n_terms: int = 100, n_cells_per_term: int = 10,
             seed: int = 0, configs: Sequence[EvalConfig] = (EvalConfig("tsum_plus"), EvalConfig("ringsum")),
             ) -> tuple[list[dict], list[dict]]:
    """Log-scale TFS error of each backend and of the zero-fill / neighbor-average baselines.

    Baselines read the Tsum summaries of the first ``tsum_plus`` configuration.
    Returns (per-method summary rows, per-query rows).
    """
    ec = exact_counts(events, grid)
    rng = np.random.default_rng(seed)
    eligible = sorted(t for t, cells in ec.counts.items() if len(cells) >= n_cells_per_term)
    picked = sorted(rng.choice(eligible, size=min(n_terms, len(eligible)), replace=False).tolist())
    queries = []
    for t in picked:
        cells = sorted(ec.counts[t])
        chosen = sorted(int(c) for c in rng.choice(cells, size=n_cells_per_term, replace=False))
        queries.extend((t, c) for c in chosen)
    per_query = []
    errors: dict[str, list[float]] = {}
    stored: dict[str, int] = {}
    baseline_reg = None
    for cfg in configs:
        reg = cfg.registry(grid)
        reg.ingest(events)
        if cfg.backend == "tsum_plus" and baseline_reg is None:
            baseline_reg = reg
        q = QueryEngine(reg)
        name = cfg.label
        for t, c in queries:
            res = q.tfs(t, c)
            actual = ec.counts[t][c]
            err = log_error(res.estimate, actual)
            errors.setdefault(name, []).append(err)
            stored[name] = stored.get(name, 0) + res.stored
            per_query.append({"method": name, "term": t, "cell": c, "actual": actual, "estimate": res.estimate,
                              "stored": int(res.stored), "log_err": err})
    if baseline_reg is not None:
        for name, est_fn in (("zero_fill", lambda s, c: zero_fill(s, c)),
                             ("neighbor_average", lambda s, c: neighbor_average(s, c, grid))):
            for t, c in queries:
                s = baseline_reg.get(t)
                est = est_fn(s, c)
                actual = ec.counts[t][c]
                err = log_error(est, actual)
                errors.setdefault(name, []).append(err)
                stored[name] = stored.get(name, 0) + (s.get(c) is not None)
                per_query.append({"method": name, "term": t, "cell": c, "actual": actual, "estimate": est,
                                  "stored": int(s.get(c) is not None), "log_err": err})
    summary = [{"method": name, "n_queries": len(errs), "n_stored": stored[name],
                "log_err_mean": statistics.fmean(errs), "log_err_std": statistics.pstdev(errs)}
               for name, errs in errors.items()]
    return summary, per_query


@dataclass(frozen=True)
class MultiBin:
    name: str
    n_single: int
    n_joint: int
    separation_cells: int


DEFAULT_BINS = (
    MultiBin("very_frequent", 6000, 1500, 0),
    MultiBin("frequent", 3000, 600, 0),
    MultiBin("medium", 2000, 300, 2),
    MultiBin("rare", 800, 80, 4),
)

MULTI_METHODS = ("intersection", "tsum_plus/independent", "tsum_plus/min_bound",
                 "ringsum/independent", "ringsum/min_bound")
MULTI_HEADER = ["bin", "method", "n_pairs", "top1_accuracy", "top1_adjacent_accuracy", "empty_results"]


def multiterm_corpus(bins: Sequence[MultiBin], pairs_per_bin: int, seed: int, grid: GridConfig,
                     alpha: float = 1.5) -> tuple[list[str], list[tuple[str, str, str]]]:
    """Term pairs per bin; a pair shares a center or sits ``separation_cells`` rows apart."""
    rng = np.random.default_rng(seed)
    specs, joint, pairs = [], [], []
    for b in bins:
        for i in range(pairs_per_bin):
            ra = int(rng.integers(b.separation_cells, grid.n_rows - b.separation_cells))
            ca = int(rng.integers(grid.n_cols))
            a_center = ra * grid.n_cols + ca
            b_center = (ra + b.separation_cells) * grid.n_cols + ca
            a, bb = f"{b.name}_{i}_a", f"{b.name}_{i}_b"
            specs += [TermSpec(a, a_center, 0.3, alpha, b.n_single), TermSpec(bb, b_center, 0.3, alpha, b.n_single)]
            joint.append((a, bb, b.n_joint))
            pairs.append((b.name, a, bb))
    return gen_corpus(specs, seed + 1, grid, joint), pairs


def eval_multiterm(events: Sequence[Event], pairs: Sequence[tuple[str, str, str]], grid: GridConfig,
                   k: int = 5, tsum_m: int | None = None, ringsum_m: int | None = None) -> list[dict]:
    """Top-1 accuracy of each multi-term method against the exact co-occurrence top-1."""
    regs = {}
    for backend, m in (("tsum_plus", tsum_m), ("ringsum", ringsum_m)):
        reg = EvalConfig(backend, m).registry(grid)
        reg.ingest(events)
        regs[backend] = QueryEngine(reg)
    hits: dict[tuple[str, str], list[tuple[int, int, int]]] = {}
    for bin_name, a, b in pairs:
        joint = exact_joint_counts(events, (a, b), grid)
        truth = int(np.lexsort((np.arange(joint.size), -joint))[0])
        answers = {"intersection": regs["tsum_plus"].intersection([a, b], k).cells}
        for backend in ("tsum_plus", "ringsum"):
            for mode in MODES:
                answers[f"{backend}/{mode}"] = regs[backend].multi_rfs([a, b], k, mode).cells
        for method in MULTI_METHODS:
            got = answers[method]
            top = got[0] if got else None
            hits.setdefault((bin_name, method), []).append(
                (int(top == truth), int(top is not None and _adjacent(top, truth, grid)), int(top is None)))
    rows = []
    for (bin_name, method), hs in hits.items():
        rows.append({"bin": bin_name, "method": method, "n_pairs": len(hs),
                     "top1_accuracy": 100.0 * statistics.fmean(h[0] for h in hs),
                     "top1_adjacent_accuracy": 100.0 * statistics.fmean(h[1] for h in hs),
                     "empty_results": sum(h[2] for h in hs)})
    return rows


# Benchmarks


def median_time(fn, repeats: int = 5) -> float:
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


UPDATE_HEADER = ["config", "strategy", "n_events", "mean_update_us", "distance_computations",
                 "max_distance_computations", "evictions", "transfers", "rejections", "dropped"]


def bench_updates(cells: np.ndarray, grid: GridConfig, configs: Sequence[EvalConfig], repeats: int = 5) -> list[dict]:
    """Median-of-runs mean per-event update latency for single-term summaries fed ``cells``."""
    cells = [int(c) for c in cells]
    rows = []
    for cfg in configs:
        reg = cfg.registry(grid, expected_total_len=len(cells))
        last = {}

        def run():
            s = reg._new_summary()
            for c in cells:
                s.update(c)
            last["s"] = s

        secs = median_time(run, repeats)
        s = last["s"]
        stats = getattr(s, "stats", None)
        m = reg.config.m
        rows.append({
            "config": cfg.label, "strategy": cfg.strategy if cfg.backend == "ringsum" else "",
            "n_events": len(cells), "mean_update_us": 1e6 * secs / len(cells),
            "distance_computations": stats.distance_computations if stats else 0,
            "max_distance_computations": (m - 1) * len(cells),
            "evictions": stats.evictions if stats else 0, "transfers": stats.transfers if stats else 0,
            "rejections": stats.rejections if stats else 0, "dropped": stats.dropped if stats else 0,
        })
    return rows


QUERY_HEADER = ["config", "n_queries", "mean_query_ms"]


def bench_queries(events: Sequence[Event], grid: GridConfig, term: str, configs: Sequence[EvalConfig],
                  n_queries: int = 100, seed: int = 0, repeats: int = 5) -> list[dict]:
    """Mean TFS latency on unstored cells with model memoization disabled."""
    rows = []
    for cfg in configs:
        reg = cfg.registry(grid)
        reg.ingest(events)
        q = QueryEngine(reg, memo=False)
        summary = reg.get(term)
        rng = np.random.default_rng(seed)
        pool = np.setdiff1d(np.arange(grid.n_cells), [c.cell for c in summary.top_k(summary.capacity)])
        cells = [int(c) for c in rng.choice(pool, size=n_queries, replace=True)]
        if cfg.backend == "ringsum":
            _ = reg.table  # the table is built offline, not per query

        def run():
            for c in cells:
                q.tfs(term, c)

        secs = median_time(run, repeats)
        rows.append({"config": cfg.label, "n_queries": n_queries, "mean_query_ms": 1e3 * secs / n_queries})
    return rows


REPLACEMENT_HEADER = ["config", "fraction", "replacements"]


def replacement_curve(cells: np.ndarray, grid: GridConfig, cfg: EvalConfig, bins: int = 10) -> list[dict]:
    """Evictions per stream fraction."""
    reg = cfg.registry(grid, expected_total_len=len(cells))
    s = reg._new_summary()
    for c in cells:
        s.update(int(c))
    pos = np.asarray(s.stats.eviction_positions, dtype=float)
    hist = np.histogram(pos, bins=bins, range=(0.5, len(cells) + 0.5))[0]
    return [{"config": cfg.label, "fraction": round((i + 1) / bins, 6), "replacements": int(h)}
            for i, h in enumerate(hist)]


# Output


def fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: str | Path, header: Sequence[str], rows: Sequence[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(r.get(h, "")) for h in header])
    return path


def read_csv(path: str | Path) -> list[dict]:
    with Path(path).open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_manifest(directory: str | Path, payload: dict) -> Path:
    path = Path(directory) / "manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=1, sort_keys=True, default=str) + "\n", encoding="utf-8")
    return path


def config_dict(cfg: EvalConfig) -> dict:
    return asdict(cfg)

