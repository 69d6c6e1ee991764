"""Shared plumbing for the experiment scripts."""
import argparse
import csv
from pathlib import Path

from diplab.cli import build_inputs
from diplab.config import RunConfig, load_config
from diplab.formats import fmt


def parser(doc, out_default):
    p = argparse.ArgumentParser(description=doc)
    p.add_argument("--config", help="YAML run configuration (default: built-in defaults)")
    p.add_argument("--out", default=out_default, help="output directory")
    p.add_argument("--seeds", default="0,1,2", help="comma-separated seeds")
    return p


def setup(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return cfg, out, [int(s) for s in args.seeds.split(",")]


def inputs(cfg, seed):
    return build_inputs(cfg, seed)


def write_rows(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in row.items()})
    print(f"wrote {path}")
