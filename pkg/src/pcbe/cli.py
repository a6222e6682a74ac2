"""``pcbe`` command line: benchmarks, scenario runs and the HTTP gateway."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import bench

log = logging.getLogger("pcbe")

EXIT_OK, EXIT_ERROR, EXIT_BAND = 0, 1, 2


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _bench_parser(sub) -> None:
    p = sub.add_parser("bench", help="run a benchmark and write CSV")
    bs = p.add_subparsers(dest="bench", required=True)

    def common(q):
        q.add_argument("--seed", type=int, default=0)
        q.add_argument("--out", type=Path, help="CSV path (default: stdout)")
        return q

    q = common(bs.add_parser("sizes", help="trapdoor/index wire sizes"))
    q.add_argument("--dict-sizes", type=_ints, default=list(bench.WIRE_REFERENCE_KB))
    q = common(bs.add_parser("profile-sizes", help="interest profile wire sizes"))
    q.add_argument("--m", type=_ints, default=list(bench.PROFILE_REFERENCE_KB))
    q = common(bs.add_parser("gen-time", help="trapdoor/index build time"))
    q.add_argument("--dict-sweep", type=_ints, default=[4000, 8000, 12000])
    q.add_argument("--k-sweep", type=_ints, default=[10, 50, 100, 200])
    q.add_argument("--fixed-n", type=int, default=6000)
    q.add_argument("--fixed-k", type=int, default=50)
    q = common(bs.add_parser("score-time", help="scoring and top-k time"))
    q.add_argument("--candidates-sweep", type=_ints, default=[10000, 20000, 40000])
    q.add_argument("--dict-sweep", type=_ints, default=[2000, 4000, 8000])
    q.add_argument("--fixed-n", type=int, default=1000)
    q.add_argument("--fixed-candidates", type=int, default=10000)
    q.add_argument("-k", type=int, default=50)
    q = common(bs.add_parser("precision", help="precision@k against obfuscation sigma"))
    q.add_argument("--sigma-sweep", type=_floats, default=[0, 0.5, 1, 2, 5])
    q.add_argument("--trials", type=int, default=100)
    q.add_argument("--pool", type=int, default=1000)
    q.add_argument("-k", type=int, default=50)
    q.add_argument("--jobs", type=int, default=1, help="worker processes (not for acceptance runs)")
    q = common(bs.add_parser("sim-cost", help="overlay messaging cost, community vs flat"))
    q.add_argument("--scenario", type=Path, help="scenario file (default: built-in group workload)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcbe", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _bench_parser(sub)

    sim = sub.add_parser("sim", help="overlay simulator").add_subparsers(dest="sim", required=True)
    r = sim.add_parser("run", help="run a scenario file")
    r.add_argument("scenario", type=Path)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--until", type=int)
    r.add_argument("--epoch-ticks", type=int, default=10)
    r.add_argument("--topology", choices=("community", "flat"), default="community")
    r.add_argument("--log", type=Path, help="event log (JSON lines; default: stdout)")
    r.add_argument("--ledger", type=Path, help="per-tick cost CSV")
    r.add_argument("--trust", type=Path, help="per-epoch global trust CSV")

    sub.add_parser("serve", help="run the HTTP gateway (PCBE_DICT_SIZE, PCBE_SECRETS, PCBE_BIND)")
    return parser


def _run_bench(args) -> bench.BenchResult:
    name = args.bench
    if name == "sizes":
        return bench.bench_sizes(args.dict_sizes, seed=args.seed)
    if name == "profile-sizes":
        return bench.bench_profile_sizes(args.m, seed=args.seed)
    if name == "gen-time":
        return bench.bench_gen_time(args.dict_sweep, args.k_sweep, args.fixed_n, args.fixed_k, seed=args.seed)
    if name == "score-time":
        return bench.bench_score_time(args.candidates_sweep, args.dict_sweep, args.fixed_n,
                                      args.fixed_candidates, args.k, seed=args.seed)
    if name == "precision":
        return bench.bench_precision(args.sigma_sweep, args.trials, args.k, args.pool, seed=args.seed,
                                     jobs=args.jobs)
    scenario = args.scenario.read_text() if args.scenario else None
    return bench.bench_sim_cost(scenario, seed=args.seed)


def _write(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, newline="")


def _serve() -> int:
    import uvicorn

    from .gateway import GatewayConfig, create_app

    cfg = GatewayConfig.from_env()
    host, _, port = cfg.bind.rpartition(":")
    uvicorn.run(create_app(cfg), host=host or "127.0.0.1", port=int(port))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bench":
            res = _run_bench(args)
            _write(args.out, res.to_csv())
            for v in res.violations:
                log.error("band violation: %s", v)
            return EXIT_OK if res.ok else EXIT_BAND
        if args.command == "sim":
            from .overlay import run
            from .reputation import trust_csv

            out = run(args.scenario.read_text(), args.seed, until=args.until,
                      epoch_ticks=args.epoch_ticks, topology=args.topology)
            _write(args.log, out.log_text())
            if args.ledger:
                args.ledger.write_text(out.ledger.to_csv())
            if args.trust:
                args.trust.write_text(trust_csv(out.trust))
            return EXIT_OK
        return _serve()
    except (OSError, ValueError, KeyError) as exc:
        log.error("%s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
