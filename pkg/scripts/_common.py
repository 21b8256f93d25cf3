"""Small helpers shared by the experiment scripts."""

import argparse
import dataclasses
import logging
from pathlib import Path


def parse_into(cls, description: str):
    """Build an argparse parser from a dataclass's fields and return a filled instance."""
    p = argparse.ArgumentParser(description=description)
    for f in dataclasses.fields(cls):
        default = f.default
        kind = type(default) if default is not None else str
        if kind is bool:
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, action="store_true", default=default)
        elif kind is tuple:
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=default,
                           type=lambda s: tuple(float(x) for x in s.split(",")))
        else:
            p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, type=kind, default=default)
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    return cls(**vars(args))


def out_dir(path: str) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d
