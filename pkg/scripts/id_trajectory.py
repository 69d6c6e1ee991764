"""Per-iteration ID1/ID2 and new-class accuracy for CE and low-rank training.

Writes one log per (objective, seed) plus spearman.csv. Plot ``iter`` against
``id1`` and ``new_acc`` from the logs with any plotting tool.
"""
from diplab.formats import write_log_csv
from diplab.train import run_base_to_new

from _common import inputs, parser, setup, write_rows


def main():
    args = parser(__doc__, "runs/id_trajectory").parse_args()
    cfg, out, seeds = setup(args)
    rows = []
    for objective in ("CE_FULLRANK", "ALG3_DIP"):
        for seed in seeds:
            dataset, model = inputs(cfg, seed)
            tcfg = cfg.train.replace(objective=objective, seed=seed, log_every_iter=True)
            res = run_base_to_new(tcfg, dataset, model)
            write_log_csv(res.records, out / f"log_{objective}_seed{seed}.csv")
            f = res.final
            rows.append({"objective": objective, "seed": seed, "from_iter": f["spearman_from_iter"],
                         "rho_id1": f["spearman_id1_newacc"], "rho_id2": f["spearman_id2_newacc"],
                         "final_id1": f["id1"], "new_acc": f["new_acc"]})
            print(objective, seed, "rho(ID1, new) =", f["spearman_id1_newacc"])
    write_rows(rows, out / "spearman.csv")


if __name__ == "__main__":
    main()
