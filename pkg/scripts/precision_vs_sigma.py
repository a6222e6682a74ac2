"""Precision@k of the encrypted ranking against the obfuscation sigma, with the random baseline."""

import argparse
import sys
from pathlib import Path

from pcbe.bench import bench_precision


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--sigmas", default="0,0.25,0.5,1,2,5,10,25")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--pool", type=int, default=1000)
    p.add_argument("-k", type=int, default=50)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("precision_vs_sigma.csv"))
    args = p.parse_args()
    sigmas = [float(s) for s in args.sigmas.split(",")]
    res = bench_precision(sigmas, args.trials, args.k, args.pool, seed=args.seed, jobs=args.jobs)
    args.out.write_text(res.to_csv(), newline="")
    for row in res.rows:
        print(f"sigma={row['sigma']:>6}  precision@{args.k}={row['mean_precision']}")
    print(f"random baseline {res.meta['random_baseline']}; wrote {args.out}")
    return 0 if res.ok else 2


if __name__ == "__main__":
    sys.exit(main())
