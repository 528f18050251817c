"""Command line entry point: ``aggflow {equiv,bench,sustain,sweep,run}``.

Exit status is 0 on success, 1 when a check fails (or no sustainable rate
exists) and 2 on a configuration error.
"""

from __future__ import annotations

import argparse
import json
import random
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from aggflow.core import ConfigurationError, InvariantViolation, Tuple
from aggflow.harness.bench import find_max_sustainable, run_bench, write_csv
from aggflow.harness.equivalence import random_config, run_equivalence
from aggflow.harness.scenarios import run_loss_scenario
from aggflow.harness.sweep import run_sweep
from aggflow.harness.workload import WorkloadConfig, generate_workload, load_config
from aggflow.pipelines import MODES, OPERATORS, build_pipeline
from aggflow.runtime.deterministic import LOOP_FIRST, LOOP_LAST, RANDOM, SchedulerStall, run_deterministic
from aggflow.runtime.ingress import IngressConfig, ingress_stream

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2

# Overridable WorkloadConfig fields and their flags.
_OVERRIDES = {
    "op": "operator",
    "mode": "mode",
    "rate": "rate",
    "duration": "duration",
    "warmup": "warmup",
    "cooldown": "cooldown",
    "wm_period": "watermark_period",
    "seed": "seed",
    "selectivity": "selectivity",
    "cost": "cost",
    "records": "records",
    "latency_cap_ms": "latency_cap_ms",
    "max_violations": "max_violations",
    "wa": "wa",
    "ws": "ws",
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="versioned JSON workload config")
    p.add_argument("--op", choices=OPERATORS)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--rate", type=float, help="injected records per second")
    p.add_argument("--duration", type=float, help="run length in seconds")
    p.add_argument("--warmup", type=float, help="seconds excluded at the start")
    p.add_argument("--cooldown", type=float, help="seconds excluded at the end")
    p.add_argument("--wm-period", type=int, help="ingress watermark period D in ticks")
    p.add_argument("--wa", type=int, help="join window advance in ticks")
    p.add_argument("--ws", type=int, help="join window size in ticks")
    p.add_argument("--seed", type=int)
    p.add_argument("--selectivity", type=float)
    p.add_argument("--cost", type=int, help="busy-loop iterations per function call")
    p.add_argument("--records", type=int, help="records per input stream")
    p.add_argument("--latency-cap-ms", type=float, help="sustainability latency cap")
    p.add_argument("--max-violations", type=int, help="seconds over the cap a sustainable run may have")
    p.add_argument("--out", help="output file (directory for sweep)")
    p.add_argument("--strict-paper-listings", action="store_true",
                   help="use the literal Unfold loop bound and periodic skip tick")
    p.add_argument("--no-guards", action="store_true", help="omit the loop watermark guards (fault injection)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggflow", description=__doc__.splitlines()[0], allow_abbrev=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("equiv", allow_abbrev=False, help="compare output multisets of every mode")
    _common(p)
    p.add_argument("--configs", type=int, default=100, help="randomized configurations per operator")
    p.add_argument("--max-records", type=int, default=2000)
    p.add_argument("--policy", choices=(LOOP_FIRST, LOOP_LAST, RANDOM),
                   help="scheduler policy (default loop-first; loop-last with --no-guards)")
    p.add_argument("--scenario", choices=("loss",),
                   help="run the constructed loop-loss scenario instead of random configs")

    p = sub.add_parser("bench", allow_abbrev=False, help="one paced run, per-second metrics as CSV")
    _common(p)

    p = sub.add_parser("sustain", allow_abbrev=False, help="largest sustainable rate on a grid")
    _common(p)
    p.add_argument("--rates", required=True, help="ascending comma-separated rates")

    p = sub.add_parser("sweep", allow_abbrev=False, help="selectivity x cost x operator grid in every mode")
    _common(p)

    p = sub.add_parser("run", allow_abbrev=False, help="deterministic run of one config; outputs as JSON lines")
    _common(p)
    return parser


def _config(args: argparse.Namespace) -> WorkloadConfig:
    overrides = {field: getattr(args, flag) for flag, field in _OVERRIDES.items() if getattr(args, flag) is not None}
    if args.no_guards:
        overrides["guards"] = False
    if args.strict_paper_listings:
        overrides["strict"] = True
    if args.config:
        return load_config(args.config, **overrides)
    return replace(WorkloadConfig(), **overrides).validate()


def _equiv(args: argparse.Namespace) -> int:
    policy = args.policy or (LOOP_LAST if args.no_guards else LOOP_FIRST)
    batch = None if policy == LOOP_LAST else 1
    if args.scenario == "loss":
        report = run_loss_scenario(not args.no_guards, policy=policy, ingress_batch=batch,
                                   strict=args.strict_paper_listings)
        print(report.summary())
        return EXIT_OK if report.passed else EXIT_FAIL
    base = _config(args)
    if args.config:
        configs = [base]
    else:
        ops = [args.op] if args.op else ["F", "M", "FM", "J", "O"]
        rng = random.Random(base.seed)
        configs = [
            replace(random_config(rng, op, max_records=args.max_records), guards=base.guards, strict=base.strict)
            for op in ops for _ in range(args.configs)
        ]
    failed = 0
    start = time.perf_counter()
    for cfg in configs:
        modes = (args.mode,) if args.mode and args.mode != "dedicated" else None
        try:
            report = run_equivalence(cfg, ("dedicated",) + modes if modes else None, policy=policy,
                                     ingress_batch=batch)
        except (InvariantViolation, SchedulerStall, IndexError) as exc:
            failed += 1
            print(f"FAIL op={cfg.operator} seed={cfg.seed}: {type(exc).__name__}: {exc}")
            continue
        if not report.passed:
            failed += 1
            print(report.summary())
    elapsed = time.perf_counter() - start
    verdict = "PASS" if not failed else "FAIL"
    print(f"{verdict} {len(configs) - failed}/{len(configs)} configurations equivalent ({elapsed:.1f}s)")
    return EXIT_OK if not failed else EXIT_FAIL


def _bench(args: argparse.Namespace) -> int:
    cfg = _config(args)
    result = run_bench(cfg)
    write_csv(result.rows, args.out or sys.stdout)
    print(result.summary(), file=sys.stderr)
    return EXIT_OK


def _sustain(args: argparse.Namespace) -> int:
    cfg = _config(args)
    try:
        grid = [float(r) for r in args.rates.split(",") if r.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"bad --rates: {exc}") from exc
    if not grid or grid != sorted(grid):
        raise ConfigurationError("--rates must be a non-empty ascending list")
    best = find_max_sustainable(cfg, grid)
    if best is None:
        print(f"no sustainable rate in {grid} (op={cfg.operator} mode={cfg.mode})")
        return EXIT_FAIL
    print(f"max sustainable rate {best:g} (op={cfg.operator} mode={cfg.mode} D={cfg.watermark_period})")
    return EXIT_OK


def _sweep(args: argparse.Namespace) -> int:
    cfg = _config(args)
    out = args.out or "sweep"
    report = run_sweep(cfg, out, progress=lambda line: print(line, file=sys.stderr, flush=True))
    print(report.summary())
    print(f"CSV files written to {Path(out).resolve()}")
    return EXIT_OK


def _run(args: argparse.Namespace) -> int:
    cfg = _config(args)
    graph = build_pipeline(cfg.operator, cfg.mode, cfg.functions(), cfg.options())
    records = generate_workload(cfg)
    max_ts = max((t.ts for s in records.values() for t in s), default=0)
    icfg = IngressConfig(cfg.watermark_period, cfg.disorder, graph.horizon)
    inputs = {n: ingress_stream(s, icfg, flush_at=max_ts + graph.horizon) for n, s in records.items()}
    result = run_deterministic(graph, inputs)
    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        for t in result.tuples():
            sink.write(json.dumps({"ts": t.ts, "attrs": _plain(t.attrs)}) + "\n")
    finally:
        if args.out:
            sink.close()
    print(f"{len(result.tuples())} output tuples, {result.steps} steps", file=sys.stderr)
    return EXIT_OK


def _plain(value):
    if isinstance(value, Tuple):
        return {"ts": value.ts, "attrs": _plain(value.attrs)}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    return value


_COMMANDS = {"equiv": _equiv, "bench": _bench, "sustain": _sustain, "sweep": _sweep, "run": _run}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
