"""Command-line entry point: ingest, query, generate, evaluate, benchmark."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import oracle as O
from .errors import (FitError, InvalidSpecError, NotMonitoredError, OutOfExtentError, ParseError,
                     RingsumError, SnapshotError)
from .grid import GridConfig, cell_center, cell_of
from .ingest import BACKENDS, Registry, RegistryConfig, parse_event, read_events
from .model import ModelParams
from .query import MODES, QueryEngine
from .ringsum import TRANSFERS, Strategy

log = logging.getLogger("ringsum")

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA = 2, 3, 4
STRATEGIES = tuple(s.value for s in Strategy)


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# Argument groups


def _grid_args(p):
    g = p.add_argument_group("grid")
    g.add_argument("--cell-size", dest="cell_size", type=float, default=1.0, help="cell size in degrees")
    g.add_argument("--lat-min", dest="lat_min", type=float, default=-90.0)
    g.add_argument("--lat-max", dest="lat_max", type=float, default=90.0)
    g.add_argument("--lon-min", dest="lon_min", type=float, default=-180.0)
    g.add_argument("--lon-max", dest="lon_max", type=float, default=180.0)


def _summary_args(p):
    g = p.add_argument_group("summary")
    g.add_argument("--backend", choices=BACKENDS, default="ringsum")
    g.add_argument("--m", type=int, default=None, help="counters per term (50 ringsum, 216 tsum_plus)")
    g.add_argument("--ratio", "--r", dest="ratio", type=float, default=0.6, help="ring radius ratio")
    g.add_argument("--rings", "--R", dest="rings", type=int, default=10, help="maximum number of rings")
    g.add_argument("--D-km", dest="D_km", type=float, default=None, help="outer ring radius")
    g.add_argument("--min-radius-km", dest="min_radius_km", type=float, default=None)
    g.add_argument("--strategy", choices=STRATEGIES, default="standard")
    g.add_argument("--theta", type=float, default=0.2, help="fixed_center freeze fraction")
    g.add_argument("--expected-total-len", dest="expected_total_len", type=int, default=None)
    g.add_argument("--transfer", choices=TRANSFERS, default="cells")


def _snapshot_arg(p, required=True):
    p.add_argument("--snapshot", type=Path, required=required, help="registry snapshot directory")
    p.add_argument("--table-cache", dest="table_cache", type=Path, default=None)


def _out_arg(p):
    p.add_argument("--out", type=Path, default=None, help="also write CSV here")


def grid_from(a) -> GridConfig:
    return GridConfig(a.cell_size, a.lat_min, a.lat_max, a.lon_min, a.lon_max)


def registry_config_from(a) -> RegistryConfig:
    return RegistryConfig(backend=a.backend, m=a.m, ratio=a.ratio, max_rings=a.rings, D_km=a.D_km,
                          min_radius_km=a.min_radius_km, strategy=a.strategy, theta=a.theta,
                          expected_total_len=a.expected_total_len, transfer=a.transfer, grid=grid_from(a))


def eval_configs_from(a, strategies=("standard",)) -> list[O.EvalConfig]:
    out = [O.EvalConfig("tsum_plus", a.tsum_m)]
    for s in strategies:
        out.append(O.EvalConfig("ringsum", a.m, a.ratio, a.rings, s, a.transfer, a.min_radius_km, a.theta))
    return out


# Output helpers


def _emit_csv(header, rows, out: Path | None):
    w = sys.stdout
    w.write(",".join(header) + "\n")
    for r in rows:
        w.write(",".join(O.fmt(r.get(h, "")) for h in header) + "\n")
    if out is not None:
        O.write_csv(out, header, rows)


def _load(a) -> Registry:
    return Registry.load(a.snapshot, a.table_cache)


def _cell_arg(a, grid) -> int:
    if a.cell is not None:
        return a.cell
    if a.lat is None or a.lon is None:
        raise ConfigError("give --cell or both --lat and --lon")
    return cell_of(a.lat, a.lon, grid)


def _events(path: Path):
    if not path.exists():
        raise DataError(f"input file {path} does not exist")
    return list(read_events(path))


# Subcommands


def cmd_ingest(a):
    cfg = registry_config_from(a)
    whitelist = None
    if a.whitelist is not None:
        if not a.whitelist.exists():
            raise DataError(f"whitelist {a.whitelist} does not exist")
        whitelist = [ln for ln in a.whitelist.read_text(encoding="utf-8").split() if ln]
    reg = Registry(cfg, whitelist, a.table_cache)
    if not a.input.exists():
        raise DataError(f"input file {a.input} does not exist")
    accepted = reg.ingest(read_events(a.input))
    reg.save(a.snapshot)
    log.info("ingested %d events (%d rejected, %d empty), %d terms", accepted, reg.rejected, reg.empty,
             len(reg.summaries))
    print(f"events={reg.n_events} rejected={reg.rejected} empty={reg.empty} terms={len(reg.summaries)}")


def cmd_rfs(a):
    reg = _load(a)
    res = QueryEngine(reg).rfs(a.term, a.k)
    text = res.to_csv(reg)
    sys.stdout.write(text)
    if a.out is not None:
        a.out.parent.mkdir(parents=True, exist_ok=True)
        a.out.write_text(text, encoding="utf-8")


TFS_CSV_HEADER = ["term", "cell_id", "lat", "lon", "estimate", "stored", "delta", "upper_bound", "center", "C",
                  "alpha"]


def cmd_tfs(a):
    reg = _load(a)
    cell = _cell_arg(a, reg.grid)
    r = QueryEngine(reg).tfs(a.term, cell)
    lat, lon = cell_center(cell, reg.grid)
    p = r.params
    row = {"term": r.term, "cell_id": r.cell, "lat": lat, "lon": lon, "estimate": r.estimate,
           "stored": int(r.stored), "delta": "" if r.delta is None else r.delta, "upper_bound": r.upper_bound,
           "center": "" if p is None else p.center, "C": "" if p is None else p.C,
           "alpha": "" if p is None else p.alpha}
    _emit_csv(TFS_CSV_HEADER, [row], a.out)


def cmd_multi(a):
    reg = _load(a)
    terms = [t for t in a.terms.split(",") if t.strip()]
    q = QueryEngine(reg)
    if a.lat is not None or a.cell is not None:
        cell = _cell_arg(a, reg.grid)
        est = q.multi_tfs(terms, cell, a.k, a.mode)
        _emit_csv(["terms", "cell_id", "mode", "estimate"],
                  [{"terms": "+".join(terms), "cell_id": cell, "mode": a.mode, "estimate": est}], a.out)
        return
    res = q.intersection(terms, a.k) if a.mode == "intersection" else q.multi_rfs(terms, a.k, a.mode)
    text = res.to_csv(reg)
    sys.stdout.write(text)
    if a.out is not None:
        a.out.parent.mkdir(parents=True, exist_ok=True)
        a.out.write_text(text, encoding="utf-8")


FIT_HEADER = ["term", "center", "lat", "lon", "C", "alpha", "log_lik"]


def cmd_fit(a):
    reg = _load(a)
    q = QueryEngine(reg)
    terms = sorted(reg.summaries) if a.term is None else [a.term]
    rows = []
    for t in terms:
        models = q.models(t, a.k) if a.all_centers else [q.model(t)]
        for m in models:
            lat, lon = cell_center(m.center, reg.grid)
            rows.append({"term": t, "center": m.center, "lat": lat, "lon": lon, "C": m.C, "alpha": m.alpha,
                         "log_lik": m.log_lik})
    _emit_csv(FIT_HEADER, rows, a.out)


def cmd_gen(a):
    grid = grid_from(a)
    if a.n < 1:
        raise ConfigError("--n must be at least 1")
    center = a.center if a.center is not None else cell_of(a.center_lat, a.center_lon, grid)
    lines = O.gen_stream(ModelParams(center, a.c, a.alpha), a.n, a.seed, grid, a.term)
    if a.output is None:
        sys.stdout.write("".join(line + "\n" for line in lines))
    else:
        O.write_lines(lines, a.output)
        log.info("wrote %d events for center %d to %s", len(lines), center, a.output)


def _manifest(a, experiment, extra=None):
    payload = {"experiment": experiment, "args": {k: (str(v) if isinstance(v, Path) else v)
                                                  for k, v in sorted(vars(a).items()) if k != "func"}}
    payload.update(extra or {})
    O.write_manifest(a.out_dir, payload)


def cmd_eval(a):
    grid = grid_from(a)
    out = a.out_dir
    if a.kind == "model":
        events = _events(a.input)
        strategies = tuple(a.strategies.split(","))
        for s in strategies:
            if s not in STRATEGIES:
                raise ConfigError(f"unknown strategy {s!r}")
        if "fixed_center" in strategies:
            raise ConfigError("fixed_center is evaluated by bench, which knows the stream length")
        rows = O.eval_model_accuracy(events, grid, eval_configs_from(a, strategies), top_k=a.top_k)
        if a.r_sweep:
            rows += O.eval_model_accuracy(events, grid, O.r_sweep_configs(a.m or 50, a.rings,
                                                                          min_radius_km=a.min_radius_km),
                                          top_k=a.top_k)
        summary = O.summarize_model_rows(rows)
        O.write_csv(out / "model_rows.csv", O.MODEL_HEADER, rows)
        O.write_csv(out / "model_summary.csv", O.SUMMARY_HEADER, summary)
        _emit_csv(O.SUMMARY_HEADER, summary, None)
    elif a.kind == "tfs":
        events = _events(a.input)
        summary, queries = O.eval_tfs(events, grid, a.n_terms, a.cells_per_term, a.seed,
                                      eval_configs_from(a))
        O.write_csv(out / "tfs_summary.csv", O.TFS_HEADER, summary)
        O.write_csv(out / "tfs_queries.csv", ["method", "term", "cell", "actual", "estimate", "stored", "log_err"],
                    queries)
        _emit_csv(O.TFS_HEADER, summary, None)
    else:
        lines, pairs = O.multiterm_corpus(O.DEFAULT_BINS, a.pairs_per_bin, a.seed, grid)
        O.write_lines(lines, out / "multi_stream.jsonl")
        events = [parse_event(ln) for ln in lines]
        rows = O.eval_multiterm(events, pairs, grid, a.k, a.tsum_m, a.m)
        O.write_csv(out / "multi.csv", O.MULTI_HEADER, rows)
        _emit_csv(O.MULTI_HEADER, rows, None)
    _manifest(a, f"eval_{a.kind}")


def cmd_bench(a):
    grid = grid_from(a)
    if a.input is not None:
        events = _events(a.input)
        term = a.term or sorted({t for ev in events for t in ev.terms})[0]
        cells = np.array([cell_of(ev.lat, ev.lon, grid) for ev in events if term in ev.terms])
    else:
        term = a.term or "bench"
        center = cell_of(a.center_lat, a.center_lon, grid)
        lines = O.gen_stream(ModelParams(center, 0.3, a.alpha), a.n, a.seed, grid, term)
        events = [parse_event(ln) for ln in lines]
        cells = np.array([cell_of(ev.lat, ev.lon, grid) for ev in events])
    ring = [O.EvalConfig("ringsum", a.m, a.ratio, a.rings, s, a.transfer, a.min_radius_km, a.theta)
            for s in STRATEGIES]
    updates = O.bench_updates(cells, grid, [O.EvalConfig("tsum_plus", a.tsum_m)] + ring, a.repeats)
    O.write_csv(a.out_dir / "bench_updates.csv", O.UPDATE_HEADER, updates)
    _emit_csv(O.UPDATE_HEADER, updates, None)
    reps = []
    for cfg in ring:
        reps += O.replacement_curve(cells, grid, cfg)
    O.write_csv(a.out_dir / "replacements.csv", O.REPLACEMENT_HEADER, reps)
    if a.queries > 0:
        qcfg = [O.EvalConfig("tsum_plus", a.query_m), O.EvalConfig("ringsum", a.query_m, a.ratio, a.rings,
                                                                    min_radius_km=a.min_radius_km)]
        queries = O.bench_queries(events, grid, term, qcfg, a.queries, a.seed, a.repeats)
        O.write_csv(a.out_dir / "bench_queries.csv", O.QUERY_HEADER, queries)
        _emit_csv(O.QUERY_HEADER, queries, None)
    _manifest(a, "bench")


TABLE1_HEADER = ["config", "rings", "counters", "C_rel_err", "alpha_rel_err", "center_accuracy"]
TABLE2_HEADER = ["method", "mean_update_us", "mean_query_ms", "log_err_mean"]
TABLE3_HEADER = ["strategy", "mean_update_us", "alpha_rel_err", "center_accuracy"]


def cmd_table(a):
    run = a.run_dir
    if not run.is_dir():
        raise DataError(f"run directory {run} does not exist")
    written = []
    if (run / "model_summary.csv").exists():
        rows = O.read_csv(run / "model_summary.csv")
        t1 = [{"config": r["config"], "rings": r["rings"], "counters": r["m"], "C_rel_err": r["C_rel_err"],
               "alpha_rel_err": r["alpha_rel_err"], "center_accuracy": r["center_accuracy"]} for r in rows]
        written.append(O.write_csv(run / "table1.csv", TABLE1_HEADER, t1))
        by_strategy = {r["strategy"]: r for r in rows if r["backend"] == "ringsum"}
    else:
        by_strategy = {}
    updates = O.read_csv(run / "bench_updates.csv") if (run / "bench_updates.csv").exists() else []
    queries = O.read_csv(run / "bench_queries.csv") if (run / "bench_queries.csv").exists() else []
    tfs = O.read_csv(run / "tfs_summary.csv") if (run / "tfs_summary.csv").exists() else []
    if updates or queries or tfs:
        methods = {}
        for r in updates:
            key = "tsum_plus" if r["config"].startswith("tsum_plus") else (r["strategy"] or "standard")
            if key in ("tsum_plus", "standard"):
                methods.setdefault("tsum_plus" if key == "tsum_plus" else "ringsum", {})["mean_update_us"] = \
                    r["mean_update_us"]
        for r in queries:
            key = "tsum_plus" if r["config"].startswith("tsum_plus") else "ringsum"
            methods.setdefault(key, {})["mean_query_ms"] = r["mean_query_ms"]
        for r in tfs:
            key = r["method"].split("(")[0]
            methods.setdefault(key, {})["log_err_mean"] = r["log_err_mean"]
        t2 = [{"method": k, **v} for k, v in methods.items()]
        written.append(O.write_csv(run / "table2.csv", TABLE2_HEADER, t2))
    if updates:
        t3 = []
        for r in updates:
            if not r["strategy"]:
                continue
            acc = by_strategy.get(r["strategy"], {})
            t3.append({"strategy": r["strategy"], "mean_update_us": r["mean_update_us"],
                       "alpha_rel_err": acc.get("alpha_rel_err", ""),
                       "center_accuracy": acc.get("center_accuracy", "")})
        written.append(O.write_csv(run / "table3.csv", TABLE3_HEADER, t3))
    if not written:
        raise DataError(f"no eval or bench outputs found in {run}")
    for p in written:
        print(p)


# Parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ringsum", description="Spatial term-frequency summaries over geotagged streams.")
    p.add_argument("--config", type=Path, default=None, help="key=value file; flags override it")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="build per-term summaries from an event file")
    s.add_argument("--input", type=Path, required=True)
    s.add_argument("--whitelist", type=Path, default=None, help="file of allowed terms, whitespace separated")
    _grid_args(s)
    _summary_args(s)
    _snapshot_arg(s)
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("rfs", help="top-k cells for a term")
    s.add_argument("--term", required=True)
    s.add_argument("--k", type=int, default=10)
    _snapshot_arg(s)
    _out_arg(s)
    s.set_defaults(func=cmd_rfs)

    for name, fn, hlp in (("tfs", cmd_tfs, "estimated frequency of a term in one cell"),
                          ("multi", cmd_multi, "multi-term top-k cells, or a joint estimate with --lat/--lon")):
        s = sub.add_parser(name, help=hlp)
        if name == "tfs":
            s.add_argument("--term", required=True)
        else:
            s.add_argument("--terms", required=True, help="comma-separated terms")
            s.add_argument("--k", type=int, default=5)
            s.add_argument("--mode", choices=MODES + ("intersection",), default="independent")
        s.add_argument("--lat", type=float, default=None)
        s.add_argument("--lon", type=float, default=None)
        s.add_argument("--cell", type=int, default=None)
        _snapshot_arg(s)
        _out_arg(s)
        s.set_defaults(func=fn)

    s = sub.add_parser("fit", help="fitted focus, spread and center per term")
    s.add_argument("--term", default=None)
    s.add_argument("--all-centers", dest="all_centers", action="store_true", help="one row per candidate center")
    s.add_argument("--k", type=int, default=None, help="with --all-centers, only the top-k centers")
    _snapshot_arg(s)
    _out_arg(s)
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("gen", help="synthetic single-term stream from the power-law model")
    s.add_argument("--c", type=float, default=0.3)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--center-lat", dest="center_lat", type=float, default=40.5)
    s.add_argument("--center-lon", dest="center_lon", type=float, default=-74.5)
    s.add_argument("--center", type=int, default=None, help="center cell id (overrides lat/lon)")
    s.add_argument("--n", type=int, default=100000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--term", default="term")
    s.add_argument("--output", type=Path, default=None)
    _grid_args(s)
    s.set_defaults(func=cmd_gen)

    s = sub.add_parser("eval", help="accuracy experiments against the exact oracle")
    s.add_argument("kind", choices=("model", "tfs", "multi"))
    s.add_argument("--input", type=Path, default=None)
    s.add_argument("--out-dir", dest="out_dir", type=Path, required=True)
    s.add_argument("--tsum-m", dest="tsum_m", type=int, default=None)
    s.add_argument("--strategies", default="standard", help="comma-separated ringsum strategies")
    s.add_argument("--r-sweep", dest="r_sweep", action="store_true")
    s.add_argument("--top-k", dest="top_k", type=int, default=5)
    s.add_argument("--n-terms", dest="n_terms", type=int, default=100)
    s.add_argument("--cells-per-term", dest="cells_per_term", type=int, default=10)
    s.add_argument("--pairs-per-bin", dest="pairs_per_bin", type=int, default=5)
    s.add_argument("--k", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    _grid_args(s)
    _summary_args(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="update and query latency, replacement curve")
    s.add_argument("--input", type=Path, default=None, help="event file; otherwise a stream is generated")
    s.add_argument("--term", default=None)
    s.add_argument("--n", type=int, default=100000)
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--center-lat", dest="center_lat", type=float, default=40.5)
    s.add_argument("--center-lon", dest="center_lon", type=float, default=-74.5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--tsum-m", dest="tsum_m", type=int, default=None)
    s.add_argument("--query-m", dest="query_m", type=int, default=10, help="counters for the query timing run")
    s.add_argument("--queries", type=int, default=100)
    s.add_argument("--repeats", type=int, default=5)
    s.add_argument("--out-dir", dest="out_dir", type=Path, required=True)
    _grid_args(s)
    _summary_args(s)
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("table", help="table-shaped CSVs from a finished eval/bench directory")
    s.add_argument("--run-dir", dest="run_dir", type=Path, required=True)
    s.set_defaults(func=cmd_table)
    return p


def read_config_file(path: Path) -> dict[str, str]:
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    out = {}
    for i, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{i}: expected key=value")
        k, v = (x.strip() for x in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    """Install config-file values as subcommand defaults so explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config", type=Path, default=None)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return
    values = read_config_file(known.config)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    command = next((t for t in rest if t in sub_action.choices), None)
    if command is None:
        return
    sub = sub_action.choices[command]
    actions = {a.dest: a for a in sub._actions}
    defaults = {}
    for k, v in values.items():
        act = actions.get(k)
        if act is None or k == "help":
            raise ConfigError(f"unknown config key {k!r} for {command}")
        if isinstance(act, argparse._StoreTrueAction):
            defaults[k] = v.lower() in ("1", "true", "yes", "on")
            continue
        try:
            val = act.type(v) if act.type else v
        except (TypeError, ValueError):
            raise ConfigError(f"bad value for {k}: {v!r}") from None
        if act.choices is not None and val not in act.choices:
            raise ConfigError(f"bad value for {k}: {v!r}; expected one of {list(act.choices)}")
        defaults[k] = val
        act.required = False
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"ringsum: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else 0
    logging.basicConfig(stream=sys.stderr, level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ConfigError, InvalidSpecError) as exc:
        print(f"ringsum: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ParseError, SnapshotError, NotMonitoredError, OutOfExtentError, FitError,
            FileNotFoundError, json.JSONDecodeError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ringsum: data error: {msg}", file=sys.stderr)
        return EXIT_DATA
    except RingsumError as exc:
        print(f"ringsum: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BrokenPipeError:
        return 0
    return 0


if __name__ == "__main__":
    sys.exit(main())
