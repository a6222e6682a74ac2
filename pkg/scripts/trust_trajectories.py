"""Per-epoch global trust of every node in a population with always-malicious peers."""

import argparse
import csv
import sys
from pathlib import Path

from pcbe.overlay import population_scenario, run


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--nodes", type=int, default=50)
    p.add_argument("--malicious", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=100)
    p.add_argument("--honest-error", type=float, default=0.05)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out", type=Path, default=Path("trust_trajectories.csv"))
    args = p.parse_args()
    with args.out.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "epoch", "node_id", "malicious", "global_trust", "evicted"])
        for seed in range(args.seeds):
            script, bad = population_scenario(args.nodes, args.malicious, epochs=args.epochs, seed=seed)
            out = run(script, seed, until=args.epochs * 10, honest_error=args.honest_error)
            evicted = out.simulator.reputation.evicted
            for epoch, node, value in out.trust:
                w.writerow([seed, epoch, node, int(node in bad), f"{value:.6f}", int(node in evicted)])
            honest_lost = len(evicted - bad)
            print(f"seed {seed:>2}: {len(bad & evicted)}/{len(bad)} malicious evicted, "
                  f"{honest_lost} honest evicted")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
