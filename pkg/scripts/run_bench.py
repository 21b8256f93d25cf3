"""Update latency per strategy, TFS query latency per backend, and the replacement curve."""

from dataclasses import asdict, dataclass

import numpy as np

from _common import out_dir, parse_into
from ringsum import oracle as O
from ringsum.grid import GridConfig, cells_of, cell_of
from ringsum.ingest import parse_event
from ringsum.model import ModelParams
from ringsum.ringsum import Strategy


@dataclass
class BenchConfig:
    update_cell_size: float = 10.0
    query_cell_size: float = 1.0
    n_updates: int = 1_000_000
    n_query_stream: int = 100_000
    alpha: float = 1.0
    m: int = 50
    query_m: int = 10
    min_radius_km: float = 200.0
    queries: int = 100
    repeats: int = 5
    seed: int = 6
    out: str = "runs/bench"


def main():
    cfg = parse_into(BenchConfig, __doc__)
    d = out_dir(cfg.out)

    grid = GridConfig(cfg.update_cell_size)
    events = [parse_event(x) for x in O.gen_stream(ModelParams(cell_of(40.5, -74.5, grid), 0.3, cfg.alpha),
                                                   cfg.n_updates, cfg.seed, grid, "t")]
    cells = cells_of(np.array([e.lat for e in events]), np.array([e.lon for e in events]), grid)
    ring = [O.EvalConfig("ringsum", cfg.m, strategy=s.value, min_radius_km=cfg.min_radius_km) for s in Strategy]
    updates = O.bench_updates(cells, grid, [O.EvalConfig("tsum_plus", cfg.m)] + ring, cfg.repeats)
    O.write_csv(d / "bench_updates.csv", O.UPDATE_HEADER, updates)
    O.write_csv(d / "replacements.csv", O.REPLACEMENT_HEADER,
                [r for c in ring for r in O.replacement_curve(cells, grid, c)])
    for r in updates:
        print(f"{r['config']:<55} {r['mean_update_us']:8.2f} us/update  evictions {r['evictions']}")

    qgrid = GridConfig(cfg.query_cell_size)
    qevents = [parse_event(x) for x in O.gen_stream(ModelParams(cell_of(40.5, -74.5, qgrid), 0.3, cfg.alpha),
                                                    cfg.n_query_stream, cfg.seed, qgrid, "t")]
    qcfg = [O.EvalConfig("tsum_plus", cfg.query_m), O.EvalConfig("ringsum", cfg.query_m)]
    queries = O.bench_queries(qevents, qgrid, "t", qcfg, cfg.queries, cfg.seed, cfg.repeats)
    O.write_csv(d / "bench_queries.csv", O.QUERY_HEADER, queries)
    for r in queries:
        print(f"{r['config']:<55} {r['mean_query_ms']:8.2f} ms/query")
    O.write_manifest(d, {"experiment": "bench", "config": asdict(cfg)})


if __name__ == "__main__":
    main()
