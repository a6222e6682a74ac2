"""Benchmarks: wire sizes, generation/scoring time scaling, precision vs sigma, overlay cost.

Each ``bench_*`` function returns a :class:`BenchResult` with rows, metadata
and a list of acceptance-band violations. Timings are medians over
repeated runs after warm-up and are only ever checked for trends.
"""

from __future__ import annotations

import csv
import gc
import io
import math
import time
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .overlay import SEND_KINDS, run
from .secure_match import (IndexBatch, ObfuscationParams, build_index, build_indices,
                           build_trapdoor, gen_key, precision_at_k, rank, top_k)
from .taxonomy import (InterestModel, kilobytes, serialize_profile, synthetic_dictionary,
                       to_plain_vector)
from .group_crypto import HEADER_FIXED, HEADER_PER_REVOKED

CSV_SCHEMA = 1
WIRE_REFERENCE_KB = {4000: "31.2656", 6000: "46.8906", 8000: "62.5156", 10000: "78.1406", 12000: "93.7500"}
PROFILE_REFERENCE_KB = {50: "0.3906", 100: "0.7813", 200: "1.5625", 400: "3.1250", 800: "6.2500"}
FLATNESS_BAND = 1.25
LINEARITY_BAND = (0.8, 1.2)  # time ratio / size ratio; [1.6, 2.4] for a doubling
MAX_EXPONENT = 2.2
REPEATS = 11
WARMUP = 3
MIN_REP_SECONDS = 0.05


@dataclass
class BenchResult:
    name: str
    columns: list[str]
    rows: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_csv(self) -> str:
        buf = io.StringIO()
        meta = {"bench": self.name, "schema": CSV_SCHEMA, "version": __version__, **self.meta}
        for k, v in meta.items():
            buf.write(f"# meta: {k}={v}\n")
        w = csv.DictWriter(buf, fieldnames=self.columns, lineterminator="\r\n", extrasaction="ignore")
        w.writeheader()
        w.writerows(self.rows)
        return buf.getvalue()


def median_times(fns: Sequence[Callable[[], object]], repeats: int = REPEATS, warmup: int = WARMUP,
                 min_rep: float = MIN_REP_SECONDS) -> list[float]:
    """Median per-call seconds for each of ``fns``, measured round-robin.

    Every repetition times each function once, in turn, so slow drift in
    machine load hits all sweep points alike. A repetition loops a function
    enough times to last about ``min_rep`` seconds.
    """
    inner = []
    for fn in fns:
        for _ in range(warmup):
            fn()
        t0 = time.perf_counter()
        fn()
        inner.append(max(1, math.ceil(min_rep / max(time.perf_counter() - t0, 1e-9))))
    samples: list[list[float]] = [[] for _ in fns]
    for _ in range(repeats):
        for fn, loops, out in zip(fns, inner, samples):
            t0 = time.perf_counter()
            for _ in range(loops):
                fn()
            out.append((time.perf_counter() - t0) / loops)
    return [float(np.median(x)) for x in samples]


def median_time(fn: Callable[[], object], repeats: int = REPEATS, warmup: int = WARMUP,
                min_rep: float = MIN_REP_SECONDS) -> float:
    return median_times([fn], repeats, warmup, min_rep)[0]


def random_model(dictionary, m: int, rng: np.random.Generator, max_weight: int = 5) -> InterestModel:
    picks = rng.choice(dictionary.n, size=m, replace=False)
    return InterestModel({dictionary.keywords[i]: int(rng.integers(1, max_weight + 1)) for i in picks})


def random_weights(count: int, n: int, m: int | tuple[int, int], rng: np.random.Generator,
                   max_weight: int = 5) -> np.ndarray:
    """(count, n) integer weight matrix, each row with ``m`` (or m in [lo, hi]) nonzeros."""
    out = np.zeros((count, n))
    for row in out:
        size = m if isinstance(m, int) else int(rng.integers(m[0], m[1] + 1))
        row[rng.choice(n, size=size, replace=False)] = rng.integers(1, max_weight + 1, size=size)
    return out


def bench_sizes(dict_sizes: Sequence[int] = tuple(WIRE_REFERENCE_KB), seed: int = 0, m: int = 50) -> BenchResult:
    """Serialize one real trapdoor and one real index per dictionary size."""
    res = BenchResult("sizes", ["n", "dim", "trapdoor_bytes", "index_bytes", "trapdoor_kb", "index_kb",
                                "reference_kb", "formula_kb"],
                      meta={"seed": seed, "wire": "u32 dim + 2*(n+2) float32", "kb": "1024 B, half-up 4dp"})
    for n in dict_sizes:
        rng = np.random.default_rng([seed, n])
        dictionary = synthetic_dictionary(n)
        key = gen_key(n, rng=rng)
        model = random_model(dictionary, min(m, n), rng)
        td = build_trapdoor(model, key, dictionary=dictionary, rng=rng).to_bytes()
        ix = build_index(model, key, dictionary=dictionary, rng=rng).to_bytes()
        del key
        gc.collect()
        tb, ib = len(td) - 4, len(ix) - 4
        row = {"n": n, "dim": n + 2, "trapdoor_bytes": tb, "index_bytes": ib,
               "trapdoor_kb": str(kilobytes(tb)), "index_kb": str(kilobytes(ib)),
               "reference_kb": WIRE_REFERENCE_KB.get(n, ""), "formula_kb": str(kilobytes(2 * (n + 2) * 4))}
        res.rows.append(row)
        if n in WIRE_REFERENCE_KB and not (row["trapdoor_kb"] == row["index_kb"] == WIRE_REFERENCE_KB[n]):
            res.violations.append(f"n={n}: {row['trapdoor_kb']} KB != reference {WIRE_REFERENCE_KB[n]} KB")
    if len(res.rows) >= 2:
        x = np.array([r["n"] for r in res.rows], float)
        y = np.array([r["trapdoor_bytes"] / 1024 for r in res.rows])
        res.meta["linear_r2"] = f"{np.corrcoef(x, y)[0, 1] ** 2:.12f}"
    return res


def bench_profile_sizes(ms: Sequence[int] = tuple(PROFILE_REFERENCE_KB), seed: int = 0, n: int = 4000) -> BenchResult:
    res = BenchResult("profile-sizes", ["m", "bytes", "kb", "reference_kb"],
                      meta={"seed": seed, "entry": "u32 index + float32 weight", "n": n})
    dictionary = synthetic_dictionary(max(n, max(ms)))
    rng = np.random.default_rng(seed)
    for m in ms:
        blob = serialize_profile(random_model(dictionary, m, rng), dictionary)
        row = {"m": m, "bytes": len(blob), "kb": str(kilobytes(len(blob))), "reference_kb": PROFILE_REFERENCE_KB.get(m, "")}
        res.rows.append(row)
        if m in PROFILE_REFERENCE_KB and row["kb"] != PROFILE_REFERENCE_KB[m]:
            res.violations.append(f"m={m}: {row['kb']} KB != reference {PROFILE_REFERENCE_KB[m]} KB")
    return res


def _ratio_checks(points: list[tuple[float, float]], label: str) -> list[str]:
    """Normalized growth ratio between consecutive sweep points must lie in LINEARITY_BAND."""
    bad = []
    for (x0, t0), (x1, t1) in zip(points, points[1:]):
        norm = (t1 / t0) / (x1 / x0)
        if not LINEARITY_BAND[0] <= norm <= LINEARITY_BAND[1]:
            bad.append(f"{label} {x0:g}->{x1:g}: time ratio {t1 / t0:.2f} for size ratio {x1 / x0:.2f}")
    return bad


def bench_gen_time(dict_sweep: Sequence[int] = (4000, 8000, 12000), k_sweep: Sequence[int] = (10, 50, 100, 200),
                   fixed_n: int = 6000, fixed_k: int = 50, seed: int = 0,
                   repeats: int = REPEATS, warmup: int = WARMUP) -> BenchResult:
    """Trapdoor/index build time across dictionary sizes and across interest-model sizes."""
    res = BenchResult("gen-time", ["sweep", "n", "k", "op", "median_ms"],
                      meta={"seed": seed, "repeats": repeats, "warmup": warmup,
                            "flatness_band": FLATNESS_BAND, "max_exponent": MAX_EXPONENT})
    rng = np.random.default_rng(seed)
    by_n: dict[str, list[tuple[float, float]]] = {"trapdoor": [], "index": []}

    def builders(n, k, key, dictionary):
        model = random_model(dictionary, min(k, n), rng)
        return [lambda: build_trapdoor(model, key, dictionary=dictionary, rng=rng),
                lambda: build_index(model, key, dictionary=dictionary, rng=rng)]

    def record(sweep, n, k, times):
        for op, t in zip(("trapdoor", "index"), times):
            res.rows.append({"sweep": sweep, "n": n, "k": k, "op": op, "median_ms": f"{t * 1e3:.4f}"})

    # Keys at large n do not fit in memory together, so the n-sweep runs point by point.
    for n in dict_sweep:
        dictionary = synthetic_dictionary(n)
        key = gen_key(n, rng=rng)
        times = median_times(builders(n, fixed_k, key, dictionary), repeats, warmup)
        record("dict", n, fixed_k, times)
        for op, t in zip(("trapdoor", "index"), times):
            by_n[op].append((n, t))
        del key
        gc.collect()
    dictionary = synthetic_dictionary(fixed_n)
    key = gen_key(fixed_n, rng=rng)
    fns = [fn for k in k_sweep for fn in builders(fixed_n, k, key, dictionary)]
    times = median_times(fns, repeats, warmup)
    by_k: dict[str, list[float]] = {"trapdoor": times[0::2], "index": times[1::2]}
    for i, k in enumerate(k_sweep):
        record("k", fixed_n, k, times[2 * i:2 * i + 2])
    for op in ("trapdoor", "index"):
        pts = by_n[op]
        if len(pts) >= 2:
            if not all(t1 > t0 for (_, t0), (_, t1) in zip(pts, pts[1:])):
                res.violations.append(f"{op}: time not increasing in n: {[f'{t * 1e3:.3f}' for _, t in pts]}")
            slope = np.polyfit(np.log([p[0] for p in pts]), np.log([p[1] for p in pts]), 1)[0]
            res.meta[f"{op}_exponent"] = f"{slope:.3f}"
            if slope > MAX_EXPONENT:
                res.violations.append(f"{op}: growth exponent {slope:.2f} > {MAX_EXPONENT}")
        if len(by_k[op]) >= 2:
            spread = max(by_k[op]) / min(by_k[op])
            res.meta[f"{op}_k_spread"] = f"{spread:.3f}"
            if spread > FLATNESS_BAND:
                res.violations.append(f"{op}: max/min over k-sweep {spread:.2f} > {FLATNESS_BAND}")
    return res


def encrypted_batch(count: int, n: int, seed: int, chunk: int = 1000, m=(5, 50)):
    """Key, trapdoor and an IndexBatch of ``count`` random candidates, built in chunks."""
    rng = np.random.default_rng(seed)
    key = gen_key(n, rng=rng)
    query = random_weights(1, n, m, rng)[0]
    trapdoor = build_trapdoor(query, key, rng=rng)
    a = np.empty((count, n + 2))
    b = np.empty((count, n + 2))
    for lo in range(0, count, chunk):
        hi = min(lo + chunk, count)
        part = build_indices(random_weights(hi - lo, n, m, rng), key, rng=rng)
        a[lo:hi], b[lo:hi] = part.a, part.b
    return key, trapdoor, IndexBatch(tuple(range(count)), a, b)


def bench_score_time(candidates_sweep: Sequence[int] = (10000, 20000, 40000),
                     dict_sweep: Sequence[int] = (2000, 4000, 8000), fixed_n: int = 1000,
                     fixed_candidates: int = 10000, k: int = 50, seed: int = 0,
                     repeats: int = REPEATS, warmup: int = WARMUP) -> BenchResult:
    """Score-and-rank time against candidate count (fixed n) and dictionary size (fixed count).

    Defaults keep every batch well above the last-level cache; sweeps that
    cross the cache size show a one-off jump that is not algorithmic.
    """
    res = BenchResult("score-time", ["sweep", "n", "candidates", "k", "median_ms"],
                      meta={"seed": seed, "repeats": repeats, "warmup": warmup,
                            "linearity_band": f"{2 * LINEARITY_BAND[0]:.1f}-{2 * LINEARITY_BAND[1]:.1f}x per doubling"})
    # One batch serves the whole candidate sweep through row-prefix views.
    _, trapdoor, full = encrypted_batch(max(candidates_sweep), fixed_n, seed)
    views = [IndexBatch(full.ids[:c], full.a[:c], full.b[:c]) for c in candidates_sweep]
    _timed_sweep(res, "candidates", trapdoor, views, [(fixed_n, c) for c in candidates_sweep],
                 k, repeats, warmup)
    del full, views
    gc.collect()
    built = [encrypted_batch(fixed_candidates, n, seed)[1:] for n in dict_sweep]
    _timed_sweep(res, "dict", [t for t, _ in built], [b for _, b in built],
                 [(n, fixed_candidates) for n in dict_sweep], k, repeats, warmup)
    return res


def _timed_sweep(res, sweep, trapdoors, batches, configs, k, repeats, warmup):
    if not isinstance(trapdoors, list):
        trapdoors = [trapdoors] * len(batches)
    fns = [lambda td=td, b=b: top_k(td, b, k) for td, b in zip(trapdoors, batches)]
    times = median_times(fns, repeats, warmup)
    points = []
    for (n, count), t in zip(configs, times):
        points.append((count if sweep == "candidates" else n, t))
        res.rows.append({"sweep": sweep, "n": n, "candidates": count, "k": k, "median_ms": f"{t * 1e3:.4f}"})
    res.violations += _ratio_checks(points, sweep)


def precision_trial(rng: np.random.Generator, sigmas: Sequence[float], n: int, pool: int, k: int,
                    mu: float = 0.0, m=(3, 15)) -> tuple[list[float], list[bool]]:
    """One pool: precision@k and exact-order agreement of the encrypted ranking per sigma."""
    key = gen_key(n, rng=rng)
    query = random_weights(1, n, m, rng)[0]
    cands = random_weights(pool, n, m, rng)
    ids = tuple(range(pool))
    truth = rank(ids, cands @ query, k)
    trapdoor = build_trapdoor(query, key, rng=rng)
    precisions, exact = [], []
    for sigma in sigmas:
        batch = build_indices(cands, key, ids, obf=ObfuscationParams(mu, sigma), rng=rng)
        found = top_k(trapdoor, batch, k)
        precisions.append(precision_at_k(found, truth, k))
        exact.append(found == truth)
    return precisions, exact


def _seeded_trial(args):
    seed, i, sigmas, n, pool, k = args
    return precision_trial(np.random.default_rng([seed, i]), sigmas, n, pool, k)


def bench_precision(sigma_sweep: Sequence[float] = (0, 0.5, 1, 2, 5), trials: int = 100, k: int = 50,
                    pool: int = 1000, n: int = 64, seed: int = 0, jobs: int = 1) -> BenchResult:
    """Mean precision@k per sigma; each trial reuses one pool and query across the whole sweep.

    Trials are seeded independently, so ``jobs > 1`` gives the same numbers.
    """
    res = BenchResult("precision", ["sigma", "trials", "k", "pool", "mean_precision", "exact_order_rate"],
                      meta={"seed": seed, "n": n, "random_baseline": f"{k / pool:.4f}"})
    tasks = [(seed, i, tuple(sigma_sweep), n, pool, k) for i in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            outcomes = list(ex.map(_seeded_trial, tasks))
    else:
        outcomes = [_seeded_trial(t) for t in tasks]
    prec = np.array([o[0] for o in outcomes]).reshape(trials, len(sigma_sweep))
    exact = np.array([o[1] for o in outcomes], float).reshape(trials, len(sigma_sweep))
    means = prec.mean(axis=0)
    for j, sigma in enumerate(sigma_sweep):
        res.rows.append({"sigma": sigma, "trials": trials, "k": k, "pool": pool,
                         "mean_precision": f"{means[j]:.6f}", "exact_order_rate": f"{exact[:, j].mean():.4f}"})
    order = np.argsort(sigma_sweep, kind="stable")
    if np.any(np.diff(means[order]) > 0):
        res.violations.append(f"mean precision increases somewhere along sigma: {means[order].round(4).tolist()}")
    for j, sigma in enumerate(sigma_sweep):
        if sigma == 0 and means[j] != 1.0:
            res.violations.append(f"sigma=0 precision {means[j]} != 1")
    return res


def cost_scenario(n_groups: int = 6, group_size: int = 8, rounds: int = 20, seed: int = 0) -> str:
    """Group-heavy messaging workload: status updates and group posts from members and outsiders."""
    rng = np.random.default_rng(seed)
    lines = ["# group messaging workload"]
    members = {}
    for g in range(n_groups):
        members[g] = [f"u{g}_{i}" for i in range(group_size)]
        for u in members[g]:
            lines.append(f"0 join {u} g{g}")
    everyone = [u for ms in members.values() for u in ms]
    for r in range(rounds):
        tick = r + 1
        for g in range(n_groups):
            poster = members[g][int(rng.integers(group_size))]
            lines.append(f"{tick} status-update {poster} 256")
            outsider = everyone[int(rng.integers(len(everyone)))]
            lines.append(f"{tick} send-group {outsider} g{g} 512")
    return "\n".join(lines) + "\n"


def bench_sim_cost(scenario: str | None = None, seed: int = 0) -> BenchResult:
    """Messaging cost of one workload under community structure vs singleton communities."""
    scenario = cost_scenario(seed=seed) if scenario is None else scenario
    res = BenchResult("sim-cost", ["topology", "messages", "bytes", "deliveries", "all_messages", "all_bytes"],
                      meta={"seed": seed, "header_fixed": HEADER_FIXED,
                            "header_per_revoked": HEADER_PER_REVOKED})
    totals = {}
    for topology in ("community", "flat"):
        out = run(scenario, seed, topology=topology)
        led = out.ledger
        msgs = led.messages_for(SEND_KINDS)
        nbytes = sum(led.per_kind.get(k, [0, 0])[1] for k in SEND_KINDS)
        totals[topology] = msgs
        res.rows.append({"topology": topology, "messages": msgs, "bytes": nbytes,
                         "deliveries": led.deliveries, "all_messages": led.messages, "all_bytes": led.bytes})
    if totals["community"] > totals["flat"]:
        res.violations.append(f"community messages {totals['community']} > flat {totals['flat']}")
    return res


def r_squared(x: Sequence[float], y: Sequence[float]) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    coef = np.polyfit(x, y, 1)
    resid = y - np.polyval(coef, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    return 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot else 1.0


__all__ = ["BenchResult", "bench_sizes", "bench_profile_sizes", "bench_gen_time", "bench_score_time",
           "bench_precision", "bench_sim_cost", "cost_scenario", "encrypted_batch", "precision_trial",
           "median_time", "random_weights", "r_squared", "WIRE_REFERENCE_KB", "PROFILE_REFERENCE_KB"]
