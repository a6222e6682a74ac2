"""Generation and scoring time sweeps; writes two CSV files for plotting."""

import argparse
import sys
from pathlib import Path

from pcbe.bench import bench_gen_time, bench_score_time


def ints(text):
    return [int(x) for x in text.split(",")]


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--gen-dict", type=ints, default=[4000, 8000, 12000])
    p.add_argument("--gen-k", type=ints, default=[10, 50, 100, 200])
    p.add_argument("--score-candidates", type=ints, default=[10000, 20000, 40000])
    p.add_argument("--score-dict", type=ints, default=[2000, 4000, 8000])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", type=Path, default=Path("."))
    args = p.parse_args()
    gen = bench_gen_time(args.gen_dict, args.gen_k, seed=args.seed)
    score = bench_score_time(args.score_candidates, args.score_dict, seed=args.seed)
    for res in (gen, score):
        path = args.outdir / f"{res.name}.csv"
        path.write_text(res.to_csv(), newline="")
        status = "ok" if res.ok else "; ".join(res.violations)
        print(f"{res.name}: {status} -> {path}")
    return 0 if gen.ok and score.ok else 2


if __name__ == "__main__":
    sys.exit(main())
