"""Ring ratio sweep: Ringsum fit accuracy as the ring ratio r varies."""

from dataclasses import asdict, dataclass

from _common import out_dir, parse_into
from ringsum import oracle as O
from ringsum.grid import GridConfig, cell_of
from ringsum.ingest import parse_event
from ringsum.model import ModelParams


@dataclass
class SweepConfig:
    cell_size: float = 10.0
    n: int = 100_000
    alpha: float = 1.0
    seed: int = 3
    m: int = 50
    rings: int = 10
    min_radius_km: float = 200.0
    ratios: tuple = (0.3, 0.4, 0.5, 0.6, 0.7, 0.8)
    out: str = "runs/r_sweep"


def main():
    cfg = parse_into(SweepConfig, __doc__)
    grid = GridConfig(cfg.cell_size)
    lines = O.gen_stream(ModelParams(cell_of(40.5, -74.5, grid), 0.3, cfg.alpha), cfg.n, cfg.seed, grid, "t")
    events = [parse_event(x) for x in lines]
    configs = O.r_sweep_configs(cfg.m, cfg.rings, ratios=cfg.ratios, min_radius_km=cfg.min_radius_km)
    summary = O.summarize_model_rows(O.eval_model_accuracy(events, grid, configs))
    d = out_dir(cfg.out)
    O.write_csv(d / "r_sweep.csv", O.SUMMARY_HEADER, summary)
    O.write_manifest(d, {"experiment": "r_sweep", "config": asdict(cfg)})
    for s in summary:
        print(f"r={s['ratio']} R={s['rings']}: alpha err {s['alpha_rel_err']:.3f}, C err {s['C_rel_err']:.3f}, "
              f"center acc {s['center_accuracy']:.0f}%")


if __name__ == "__main__":
    main()
