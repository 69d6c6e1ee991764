"""Parameter-efficiency table for CLIP-sized prompt shapes and the DIP+MaPLe preset."""
import argparse
from pathlib import Path

from diplab.cli import efficiency_rows
from diplab.prompt import param_count_dip_maple

from _common import write_rows


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--out", default="runs/efficiency")
    args = p.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = efficiency_rows([(4, 512, 1), (4, 512, 2), (4, 512, 3), (16, 512, 1), (4, 768, 1)])
    for r in rows:
        print(f"n={r['n']} d={r['d']} r={r['r']}: {r['trainable']} trainable vs {r['full_prompt']} "
              f"({r['ratio']:.3f}x)")
    print(f"DIP+MaPLe: {param_count_dip_maple(layers=1)} per layer, {param_count_dip_maple()} total")
    write_rows(rows, out / "efficiency.csv")


if __name__ == "__main__":
    main()
