"""Few-shot accuracy on all classes for each shot count, CE versus low-rank prompts."""
import numpy as np

from diplab.train import run_fewshot

from _common import inputs, parser, setup, write_rows


def main():
    p = parser(__doc__, "runs/fewshot")
    p.add_argument("--shots", default="1,2,4,8,16")
    args = p.parse_args()
    cfg, out, seeds = setup(args)
    shots = [int(s) for s in args.shots.split(",")]
    rows = []
    for objective in ("CE_FULLRANK", "ALG3_DIP"):
        tables = []
        for seed in seeds:
            dataset, model = inputs(cfg, seed)
            tables.append(run_fewshot(cfg.train.replace(objective=objective, seed=seed), dataset, shots, model))
        for j, s in enumerate(shots):
            acc = float(np.mean([t[j]["accuracy"] for t in tables]))
            rows.append({"objective": objective, "shots": s, "accuracy": acc, "params": tables[0][j]["params"]})
            print(f"{objective:<12} shots {s:2d} accuracy {acc:.2f}")
    write_rows(rows, out / "fewshot.csv")


if __name__ == "__main__":
    main()
