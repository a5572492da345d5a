"""Grid over the neighborhood and memory loss weights on the synthetic graph.

    python scripts/loss_weight_sweep.py --out sweep.csv
"""

import argparse
import csv

from graphmemad.config import RunConfig
from graphmemad.trainer import sweep


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    grid = [0.001, 0.01, 0.1]
    cfg = RunConfig(d_h=32, m=64, epochs=args.epochs, seed=args.seed)
    rows = sweep(cfg, [1.0], grid, grid)
    with open(args.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    print("lambda_n \\ lambda_m " + " ".join(f"{v:>7g}" for v in grid))
    for ln in grid:
        cells = [r["auc"] for r in rows if r["lambda_n"] == ln]
        print(f"{ln:>19g} " + " ".join(f"{a:7.3f}" for a in cells))


if __name__ == "__main__":
    main()
