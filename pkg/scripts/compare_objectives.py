"""CE / ALG1 / ALG2 / ALG3 on identical seeds, with a small lambda grid for the regularized variants."""
from diplab.cli import compare_variants

from _common import parser, setup, write_rows


def main():
    p = parser(__doc__, "runs/compare_objectives")
    p.add_argument("--lambdas", default="0.1", help="comma-separated lambda grid for ALG1/ALG2")
    args = p.parse_args()
    cfg, out, seeds = setup(args)
    rows = []
    for lam in [float(x) for x in args.lambdas.split(",")]:
        cfg.train = cfg.train.replace(lam=lam)
        for row in compare_variants(cfg, seeds, out / f"lambda_{lam:g}"):
            rows.append({"lambda": lam, **row})
            print(f"lambda={lam:g} {row['variant']:<12} base {row['base']:6.2f} new {row['new']:6.2f} "
                  f"H {row['H']:6.2f} params {row['params']}")
    write_rows(rows, out / "compare_objectives.csv")


if __name__ == "__main__":
    main()
