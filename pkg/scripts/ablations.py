"""Rank, dropout, epochs, depth and placement sweeps, seed-averaged."""
import numpy as np

from diplab.train import run_ablation

from _common import inputs, parser, setup, write_rows

AXES = {
    "rank": [1, 2, 3],
    "dropout": [0.0, 0.1, 0.2, 0.3, 0.5],
    "epochs": [5, 10, 20, 30, 50],
    "depth": [1, 2],
    "placement": ["text", "image"],
}


def main():
    p = parser(__doc__, "runs/ablations")
    p.add_argument("--axes", default=",".join(AXES), help="comma-separated subset of " + ",".join(AXES))
    args = p.parse_args()
    cfg, out, seeds = setup(args)
    for axis in args.axes.split(","):
        per_seed = []
        for seed in seeds:
            dataset, model = inputs(cfg, seed)
            per_seed.append(run_ablation(axis, AXES[axis], cfg.train.replace(seed=seed), dataset, model))
        rows = []
        for j, row in enumerate(per_seed[0]):
            means = {k: float(np.mean([ps[j][k] for ps in per_seed])) for k in ("base", "new", "H")}
            rows.append({**row, **means})
            print(f"{axis}={row['value']}: params {row['params']} base {means['base']:.2f} "
                  f"new {means['new']:.2f} H {means['H']:.2f}")
        write_rows(rows, out / f"ablation_{axis}.csv")


if __name__ == "__main__":
    main()
