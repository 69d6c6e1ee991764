"""Command-line entry point: ``diplab {train,analyze,compare,ablate,report}``.

Exit codes: 0 success, 2 configuration error, 3 numerical error, 4 I/O or integrity error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import data
from .config import RunConfig, dump_config, load_config
from .errors import ConfigError, DegeneracyError, IntegrityError, RangeError, ShapeError, UndefinedMetricError
from .formats import (fmt, load_checkpoint, read_matrix_csv, restore_prompt, save_checkpoint,
                      stored_param_count, write_json, write_log_csv)
from .linalg import svd_thin
from .metrics import information_density
from .model import build_model
from .prompt import merge, param_count_dip, param_count_dip_maple, param_count_full
from .train import fewshot_runs, run_ablation, run_base_to_new, template_prompt

log = logging.getLogger("diplab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4

SPEARMAN_NOTE = ("spearman_* are computed over log records with iter >= spearman_from_iter "
                 "(after the warm-up epoch)")


def build_inputs(cfg: RunConfig, seed: int):
    m, d = cfg.model, cfg.data
    model = build_model(seed=m.seed, d_text=m.d_text, d_vis=m.d_vis, m_layers=m.m_layers,
                        n_layers=m.n_layers, tau=m.tau, attn_scale=m.attn_scale,
                        prompt_depth=max(1, min(cfg.train.prompt_depth, max(m.m_layers, m.n_layers))))
    dataset = data.generate(d.c_total, d.per_class, d.noise_sigma, seed, d_vis=m.d_vis, d_text=m.d_text,
                            n_patches=d.n_patches, test_per_class=d.test_per_class,
                            name_noise=d.name_noise)
    return dataset, model


def _seeded(cfg, seed):
    if seed is not None:
        cfg.train = cfg.train.replace(seed=seed)
    return cfg


def _write_run(result, cfg, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_log_csv(result.records, out_dir / "log.csv")
    summary = dict(result.final)
    summary["note"] = SPEARMAN_NOTE
    if result.split is not None:
        summary["base_classes"] = list(result.split.base_classes)
        summary["new_classes"] = list(result.split.new_classes)
    summary["config"] = dump_config(cfg)
    write_json(summary, out_dir / "summary.json")
    save_checkpoint(result.prompts, out_dir / "checkpoint.json", cfg.train.placement,
                    cfg.train.init, cfg.train.template_seed)
    return summary


def cmd_train(args) -> int:
    cfg = _seeded(load_config(args.config), args.seed)
    if args.log_every_iter:
        cfg.train = cfg.train.replace(log_every_iter=True)
    out_dir = Path(args.out or cfg.output.dir)
    dataset, model = build_inputs(cfg, cfg.train.seed)
    if cfg.protocol.kind == "fewshot":
        rows, result = [], None
        for shots, result in fewshot_runs(cfg.train, dataset, cfg.protocol.shots_list, model):
            rows.append({"shots": shots, "accuracy": result.final["base_acc"],
                         "params": result.final["param_count"]})
        _write_rows(rows, out_dir / "fewshot.csv")
        # log.csv and checkpoint.json come from the last shot count in the list
        summary = _write_run(result, cfg, out_dir)
        summary["fewshot"] = rows
        write_json(summary, out_dir / "summary.json")
    else:
        result = run_base_to_new(cfg.train, dataset, model)
        summary = _write_run(result, cfg, out_dir)
    print(f"wrote {out_dir}/log.csv, summary.json, checkpoint.json")
    for key in ("base_acc", "new_acc", "harmonic_mean", "id1", "param_count"):
        if key in summary:
            print(f"{key} = {summary[key]}")
    return EXIT_OK


def _init_for(ck, args):
    """The frozen init to merge with: an explicit CSV, else re-derived from config or checkpoint seed."""
    n, d = ck["n"], ck["d"]
    if args.init:
        return read_matrix_csv(args.init)
    init, seed = ck.get("init", "template"), ck.get("seed", 0)
    if args.config:
        cfg = load_config(args.config)
        init, seed = cfg.train.init, cfg.train.template_seed
    if init == "template" and ck.get("placement", "text") == "text":
        return template_prompt(n, d, seed)
    return np.zeros((n, d))


def analyze_matrix(m, ks):
    """Singular spectrum and IDk for each k; tall matrices are transposed first."""
    if m.shape[0] > m.shape[1]:
        m = m.T
    sigma = np.array(svd_thin(m).sigma)
    return sigma, {k: information_density(sigma, k) for k in ks}


def cmd_analyze(args) -> int:
    ks = [int(k) for k in args.k.split(",")] if args.k else [1, 2]
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        prompt = restore_prompt(ck, _init_for(ck, args))
        matrix = merge(prompt)
        print(f"checkpoint: kind={ck['kind']} n={ck['n']} d={ck['d']} r={ck['r']} "
              f"stored_params={stored_param_count(ck)}")
        print("analysing merged prompt p_init + p_a @ p_b" if ck["kind"] == "dip" else "analysing prompt p")
    elif args.matrix:
        matrix = read_matrix_csv(args.matrix)
        print(f"matrix: {matrix.shape[0]}x{matrix.shape[1]}")
    else:
        raise ConfigError("analyze needs --checkpoint or --matrix")
    ks = [k for k in ks if k <= min(matrix.shape)] or [min(matrix.shape)]
    sigma, ids = analyze_matrix(matrix, ks)
    for i, s in enumerate(sigma, 1):
        print(f"sigma_{i} = {fmt(s)}")
    for k, v in ids.items():
        print(f"ID{k} = {fmt(v)}")
    return EXIT_OK


def _write_rows(rows, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: fmt(v) if isinstance(v, float) else v for k, v in row.items()})


def _print_table(rows):
    keys = list(rows[0])
    cells = [[fmt_short(r[k]) for k in keys] for r in rows]
    widths = [max(len(k), *(len(c[j]) for c in cells)) for j, k in enumerate(keys)]
    print("  ".join(k.ljust(w) for k, w in zip(keys, widths)))
    for c in cells:
        print("  ".join(x.ljust(w) for x, w in zip(c, widths)))


def fmt_short(v):
    return f"{v:.2f}" if isinstance(v, float) else str(v)


def compare_variants(cfg, seeds, out_dir=None):
    """Seed-averaged base/new/H per objective; every variant sees the same seeds."""
    rows = []
    for variant in cfg.compare.variants:
        per_seed = []
        for seed in seeds:
            dataset, model = build_inputs(cfg, seed)
            tcfg = cfg.train.replace(objective=variant, seed=seed)
            result = run_base_to_new(tcfg, dataset, model)
            if out_dir is not None:
                run_dir = Path(out_dir) / variant / f"seed_{seed}"
                run_dir.mkdir(parents=True, exist_ok=True)
                write_log_csv(result.records, run_dir / "log.csv")
            f = result.final
            per_seed.append((f["base_acc"], f["new_acc"], f["harmonic_mean"], f["param_count"]))
        arr = np.array(per_seed, dtype=np.float64)
        rows.append({"variant": variant, "base": float(arr[:, 0].mean()), "new": float(arr[:, 1].mean()),
                     "H": float(arr[:, 2].mean()), "params": int(per_seed[0][3])})
    return rows


def _seed_list(args, default):
    if getattr(args, "seeds", None):
        return [int(s) for s in args.seeds.split(",")]
    if getattr(args, "seed", None) is not None:
        return [args.seed]
    return list(default)


def cmd_compare(args) -> int:
    cfg = load_config(args.config)
    seeds = _seed_list(args, cfg.compare.seeds)
    out_dir = Path(args.out or cfg.output.dir)
    rows = compare_variants(cfg, seeds, out_dir)
    _write_rows(rows, out_dir / "compare.csv")
    print(f"seeds: {','.join(map(str, seeds))}")
    _print_table(rows)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _seeded(load_config(args.config), args.seed)
    axis = args.axis or cfg.ablate.axis
    if args.values:
        values = [v if axis == "placement" else (float(v) if axis == "dropout" else int(v))
                  for v in args.values.split(",")]
    else:
        values = cfg.ablate.values
    seeds = _seed_list(args, [cfg.train.seed])
    out_dir = Path(args.out or cfg.output.dir)
    per_seed = []
    for seed in seeds:
        dataset, model = build_inputs(cfg, seed)
        per_seed.append(run_ablation(axis, values, cfg.train.replace(seed=seed), dataset, model))
    rows = []
    for j, row in enumerate(per_seed[0]):
        rows.append({**row, **{k: float(np.mean([ps[j][k] for ps in per_seed])) for k in ("base", "new", "H")}})
    _write_rows(rows, out_dir / f"ablation_{axis}.csv")
    _print_table(rows)
    return EXIT_OK


def efficiency_rows(dims):
    rows = []
    for n, d, r in dims:
        if r < 1 or r >= min(n, d):
            raise RangeError(f"rank {r} must satisfy 1 <= r < min(n, d) = {min(n, d)}")
        dip, full = param_count_dip(n, d, r), param_count_full(n, d)
        rows.append({"n": n, "d": d, "r": r, "trainable": dip, "stored": dip, "full_prompt": full,
                     "ratio": dip / full, "inference": "merged: same cost as an n x d prompt"})
    return rows


def cmd_report(args) -> int:
    dims = []
    for spec in args.dims or ["4,512,1"]:
        parts = [int(x) for x in spec.split(",")]
        if len(parts) != 3:
            raise ConfigError(f"--dims expects n,d,r, got {spec!r}")
        dims.append(tuple(parts))
    rows = efficiency_rows(dims)
    _print_table(rows)
    if args.maple:
        per_layer = param_count_dip_maple(layers=1)
        print(f"DIP+MaPLe preset: {per_layer} per layer x 9 layers = {param_count_dip_maple()} total")
    return EXIT_OK


def make_parser():
    p = argparse.ArgumentParser(prog="diplab", description="Low-rank prompt tuning laboratory")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="YAML run configuration")
        sp.add_argument("--out", help="output directory (default: output.dir from the config)")
        sp.add_argument("--seed", type=int, help="override train.seed")
        sp.add_argument("--seeds", help="comma-separated seed list")
        sp.add_argument("--log-every-iter", action="store_true", help="evaluate after every iteration")

    sp = sub.add_parser("train", help="run one experiment and write log.csv/summary.json/checkpoint.json")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("analyze", help="singular spectrum and IDk of a checkpoint or matrix CSV")
    sp.add_argument("--checkpoint")
    sp.add_argument("--matrix", help="matrix CSV, one row per line")
    sp.add_argument("--init", help="matrix CSV holding the frozen init to merge with")
    sp.add_argument("--config", help="config whose train.init/template_seed re-derive the init")
    sp.add_argument("--k", help="comma-separated orders (default 1,2)")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("compare", help="CE / ALG1 / ALG2 / ALG3 on identical seeds")
    common(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("ablate", help="one row per value along an ablation axis")
    common(sp)
    sp.add_argument("--axis", choices=["rank", "dropout", "epochs", "depth", "placement"])
    sp.add_argument("--values", help="comma-separated axis values")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("report", help="parameter-efficiency table")
    sp.add_argument("--dims", action="append", help="n,d,r (repeatable)")
    sp.add_argument("--maple", action="store_true", help="also print the DIP+MaPLe preset total")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, RangeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DegeneracyError, UndefinedMetricError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except IntegrityError as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ShapeError, KeyError, ValueError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
