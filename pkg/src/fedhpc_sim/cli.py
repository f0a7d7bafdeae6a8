"""Command-line front end.

Exit codes: 0 success, 1 a calibration anchor failed, 2 usage or config
error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import config as cfgmod
from . import hpcsim
from .algorithms import ALGORITHMS
from .calibration import calibrate_check
from .errors import ConfigError
from .orchestrator import MetricsLog, improvement_matrix, run_scenario, summarize, summary_text

SEED_ENV = "FEDHPC_SIM_SEED"
U64_MAX = 2**64 - 1
EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3
COMPASS_VS_ASYNC_RATE = 0.7


class UsageError(Exception):
    pass


def _parse_seed(text: str, source: str) -> int:
    try:
        seed = int(text, 10)
    except ValueError:
        raise UsageError(f"{source}: seed must be an integer, got {text!r}") from None
    if not 0 <= seed <= U64_MAX:
        raise UsageError(f"{source}: seed must be in [0, 2**64 - 1], got {seed}")
    return seed


def _resolve_seed(args) -> int | None:
    if args.seed is not None:
        return _parse_seed(args.seed, "--seed")
    env = os.environ.get(SEED_ENV)
    if env:
        return _parse_seed(env, SEED_ENV)
    return None


def _algorithm_list(values: list[str] | None) -> list[str]:
    names = []
    for v in values or []:
        names.extend(n.strip() for n in v.split(",") if n.strip())
    bad = [n for n in names if n not in ALGORITHMS]
    if bad:
        raise UsageError(f"unknown algorithm {', '.join(map(repr, bad))}; valid names: {', '.join(ALGORITHMS)}")
    return names


def _load(args) -> cfgmod.ScenarioConfig:
    if args.config is None:
        raise UsageError("--config PATH is required")
    config = cfgmod.load(args.config)
    seed = _resolve_seed(args)
    return config if seed is None else config.with_seed(seed)


def _prepare_out(out: Path, files: list[Path], force: bool) -> None:
    """Create ``out`` and refuse to clobber any of ``files`` without ``--force``."""
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out}: exists and is not a directory")
    existing = [str(f) for f in files if f.exists()]
    if existing and not force:
        raise UsageError(f"refusing to overwrite {', '.join(existing)} (use --force)")
    for d in sorted({f.parent for f in files}):
        d.mkdir(parents=True, exist_ok=True)


def _summary_csv(summary: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("key", "value"))

    def walk(prefix, v):
        if isinstance(v, dict):
            for k, x in v.items():
                walk(f"{prefix}.{k}" if prefix else k, x)
        else:
            w.writerow((prefix, "" if v is None else repr(v) if isinstance(v, float) else v))

    walk("", summary)
    return buf.getvalue()


def _render_summary(summary: dict, fmt: str) -> str:
    return _summary_csv(summary) if fmt == "csv" else summary_text(summary)


# -- worker -------------------------------------------------------------------

def _run_one(config: cfgmod.ScenarioConfig, trace: bool):
    events = [] if trace else None
    log = run_scenario(config, events)
    rows = None
    if trace:
        rows = [hpcsim.SimEvent(e.time, e.sequence, e.kind, e.client_id, e.detail) for e in events]
    return log, rows


def _run_many(jobs: list[cfgmod.ScenarioConfig], trace: bool, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [_run_one(c, trace) for c in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_run_one, jobs, [trace] * len(jobs)))


def _write_run(out: Path, log: MetricsLog, events, fmt: str) -> dict:
    summary = summarize(log)
    log.write_csv(out / "metrics.csv")
    (out / "summary.txt").write_text(_render_summary(summary, fmt))
    if events is not None:
        hpcsim.write_trace_csv(events, out / "events.csv")
    return summary


def _run_files(trace: bool) -> list[str]:
    return ["metrics.csv", "summary.txt"] + (["events.csv"] if trace else [])


def _seeds(config: cfgmod.ScenarioConfig, n: int | None) -> list[int] | None:
    if n is None:
        return None
    if n < 1:
        raise UsageError("--sweep-seeds must be >= 1")
    if config.seed + n - 1 > U64_MAX:
        raise UsageError("seed sweep runs past 2**64 - 1")
    return [config.seed + k for k in range(n)]


# -- subcommands --------------------------------------------------------------

def cmd_simulate(args) -> int:
    config = _load(args)
    names = _algorithm_list([args.algorithm] if args.algorithm else None)
    if len(names) > 1:
        raise UsageError("simulate takes a single --algorithm; use compare for several")
    if names:
        config = config.with_algorithm(names[0])
    out = Path(args.out)
    seeds = _seeds(config, args.sweep_seeds)
    run_files = _run_files(args.trace)

    if seeds is None:
        _prepare_out(out, [out / f for f in run_files], args.force)
        log, events = _run_many([config], args.trace, 1)[0]
        summary = _write_run(out, log, events, args.format)
        print(f"{config.name} [{config.algorithm.kind}, seed {config.seed}]: "
              f"final global loss {summary['final_global_loss']:.6f}, rounds {summary['round_counts']}")
        return EXIT_OK

    targets = [out / f"seed_{s}" / f for s in seeds for f in run_files] + [out / "sweep.csv"]
    _prepare_out(out, targets, args.force)
    results = _run_many([config.with_seed(s) for s in seeds], args.trace, args.jobs)
    clients = config.client_ids
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "final_global_loss", "aggregations", "round_spread"] + [f"rounds_{c}" for c in clients])
        for s, (log, events) in zip(seeds, results):
            summary = _write_run(out / f"seed_{s}", log, events, args.format)
            counts = [summary["round_counts"].get(c, 0) for c in clients]
            w.writerow([s, repr(summary["final_global_loss"]), summary["aggregations"], max(counts) - min(counts)]
                       + counts)
    print(f"{len(seeds)} seeds written under {out}")
    return EXIT_OK


def _write_comparison(path: Path, summaries: dict[str, dict], clients: list[str]) -> None:
    losses = {a: s["final_global_loss"] for a, s in summaries.items()}
    matrix = improvement_matrix(losses)
    algs = list(summaries)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "final_global_loss", "final_global_acc", "aggregations", "total_local_rounds",
                    "round_spread"] + [f"rounds_{c}" for c in clients] + [f"improvement_vs_{b}" for b in algs])
        for a in algs:
            s = summaries[a]
            counts = [s["round_counts"].get(c, 0) for c in clients]
            w.writerow([a, repr(s["final_global_loss"]), repr(s["final_global_acc"]), s["aggregations"],
                        s["total_local_rounds"], max(counts) - min(counts)] + counts
                       + [repr(matrix[a][b]) for b in algs])


def win_rates(per_seed: list[dict[str, float]]) -> dict[str, dict[str, float]]:
    """Fraction of seeds in which row algorithm's final loss is <= column's."""
    algs = list(per_seed[0])
    return {a: {b: sum(r[a] <= r[b] for r in per_seed) / len(per_seed) for b in algs} for a in algs}


def cmd_compare(args) -> int:
    config = _load(args)
    algs = _algorithm_list(args.algorithm) or list(ALGORITHMS)
    if len(set(algs)) < 2:
        raise UsageError("compare needs at least two distinct algorithms")
    algs = list(dict.fromkeys(algs))
    out = Path(args.out)
    seeds = _seeds(config, args.sweep_seeds)
    run_files = _run_files(args.trace)
    clients = config.client_ids

    if seeds is None:
        targets = [out / a / f for a in algs for f in run_files] + [out / "comparison.csv"]
        _prepare_out(out, targets, args.force)
        results = _run_many([config.with_algorithm(a) for a in algs], args.trace, args.jobs)
        summaries = {a: _write_run(out / a, log, ev, args.format) for a, (log, ev) in zip(algs, results)}
        _write_comparison(out / "comparison.csv", summaries, clients)
        for a, s in summaries.items():
            print(f"{a:<11} final global loss {s['final_global_loss']:.6f}  rounds {s['round_counts']}")
        return EXIT_OK

    targets = [out / f"seed_{s}" / a / f for s in seeds for a in algs for f in run_files]
    targets += [out / f"seed_{s}" / "comparison.csv" for s in seeds] + [out / "win_rates.csv"]
    _prepare_out(out, targets, args.force)
    jobs = [config.with_seed(s).with_algorithm(a) for s in seeds for a in algs]
    results = iter(_run_many(jobs, args.trace, args.jobs))
    per_seed = []
    for s in seeds:
        summaries = {}
        for a in algs:
            log, ev = next(results)
            summaries[a] = _write_run(out / f"seed_{s}" / a, log, ev, args.format)
        _write_comparison(out / f"seed_{s}" / "comparison.csv", summaries, clients)
        per_seed.append({a: summaries[a]["final_global_loss"] for a in algs})
    rates = win_rates(per_seed)
    with open(out / "win_rates.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm"] + [f"le_{b}" for b in algs])
        for a in algs:
            w.writerow([a] + [repr(rates[a][b]) for b in algs])
    n = len(seeds)
    for a in algs:
        for b in algs:
            if a != b:
                print(f"{a} <= {b} final loss in {round(rates[a][b] * n)}/{n} seeds ({100 * rates[a][b]:.1f}%)")
    if "fedcompass" in algs and "fedasync" in algs:
        r = rates["fedcompass"]["fedasync"]
        status = "PASS" if r >= COMPASS_VS_ASYNC_RATE else "FAIL"
        print(f"fedcompass <= fedasync in >= {COMPASS_VS_ASYNC_RATE:.0%} of {n} seeds: {status}")
    return EXIT_OK


def cmd_calibrate_check(args) -> int:
    config = _load(args) if args.config else cfgmod.shipped("table4_queued.cfg")
    checks = calibrate_check(config)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_CHECK_FAILED


def cmd_emit_defaults(args) -> int:
    out = Path(args.out)
    targets = [out / name for name in cfgmod.SHIPPED]
    _prepare_out(out, targets, args.force)
    for path in targets:
        path.write_text(cfgmod.dumps(cfgmod.SHIPPED[path.name]()))
        print(f"wrote {path}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fedhpc-sim", description="Simulate federated learning across HPC facilities.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", metavar="PATH")
        sp.add_argument("--seed", metavar="U64", help=f"overrides the config seed; falls back to ${SEED_ENV}")
        sp.add_argument("--out", metavar="DIR", default=out_default)
        sp.add_argument("--force", action="store_true", help="overwrite existing output files")

    def runner(sp):
        sp.add_argument("--trace", action="store_true", help="also write events.csv")
        sp.add_argument("--sweep-seeds", type=int, metavar="N", help="run seeds seed..seed+N-1")
        sp.add_argument("--jobs", type=int, default=1, metavar="K", help="worker processes for sweeps")
        sp.add_argument("--format", choices=("csv", "structured-text"), default="structured-text",
                        help="summary.txt format")

    s = sub.add_parser("simulate", help="run one scenario")
    common(s, "out")
    runner(s)
    s.add_argument("--algorithm", metavar="NAME", help=f"one of {', '.join(ALGORITHMS)}")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="run several algorithms under identical conditions")
    common(c, "out")
    runner(c)
    c.add_argument("--algorithm", metavar="NAME", action="append",
                   help="comma-separated or repeated; defaults to all four")
    c.set_defaults(func=cmd_compare)

    k = sub.add_parser("calibrate-check", help="check facility models against reference anchors")
    k.add_argument("--config", metavar="PATH", help="defaults to the shipped queued scenario")
    k.add_argument("--seed", metavar="U64", help=argparse.SUPPRESS)
    k.set_defaults(func=cmd_calibrate_check)

    e = sub.add_parser("emit-defaults", help="write the shipped scenario configs")
    e.add_argument("--out", metavar="DIR", default="scenarios")
    e.add_argument("--force", action="store_true")
    e.set_defaults(func=cmd_emit_defaults)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as e:  # anything past validation is a runtime failure
        print(f"runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
