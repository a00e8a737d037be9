"""Benchmark runner: execute generated blocks across thread counts.

Per (threads) configuration the runner seeds state, generates the blocks,
executes one unmeasured warm-up block, then times execution plus commit
plus patching of the measured blocks and reports txn/s. Verification
against the sequential oracle runs outside the timed section.

`--txn-cost-us` simulates per-execution contract cost with a sleep. On a
GIL interpreter this is what makes thread scaling observable at all: the
engine's bookkeeping serializes on the GIL, while the simulated contract
work overlaps, matching deployments where contract execution dominates.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import dataclass, replace
from typing import Optional

from .executor import Stats, execute_block
from .oracle import sequential_execute_block
from .state import apply_outputs, state_hash
from .workloads import KINDS, MODES, WorkloadSpec, generate, seed_state

CSV_HEADER = ["workload", "mode", "threads", "block_size", "blocks", "seed",
              "total_txns", "elapsed_ms", "tps", "aborts", "commit_reexecs",
              "spec_failures"]

WORKERS_ENV = "DEFERRED_STM_WORKERS"


@dataclass
class BenchConfig:
    workload: WorkloadSpec
    blocks: int = 3
    block_size: int = 1000
    threads: tuple = (1,)
    verify: bool = False
    csv_path: Optional[str] = None
    txn_cost: float = 0.0
    event_log: Optional[str] = None

    def __post_init__(self):
        if self.blocks < 1:
            raise ValueError("need at least one block")
        if not self.threads or any(t < 1 for t in self.threads):
            raise ValueError("every thread count must be >= 1")


def _mismatch(engine, reference, base_state) -> Optional[str]:
    if engine.outputs != reference.outputs:
        for i, (got, want) in enumerate(zip(engine.outputs, reference.outputs)):
            if got != want:
                return f"output of txn {i} differs"
        return "output count differs"
    if engine.committed_deferred != reference.committed_deferred:
        return "committed deferred values differ"
    got_state = apply_outputs(base_state, (o.write_set for o in engine.outputs),
                              engine.committed_deferred)
    want_state = apply_outputs(base_state, (o.write_set for o in reference.outputs),
                               reference.committed_deferred)
    if state_hash(got_state) != state_hash(want_state):
        return "post-state hash differs"
    return None


def run(config: BenchConfig) -> int:
    """Run every (threads) configuration; returns a process exit code."""
    spec = config.workload
    rows = []
    for threads in config.threads:
        base_state = seed_state(spec)
        blocks = [generate(replace(spec, seed=spec.seed + i), config.block_size)
                  for i in range(config.blocks + 1)]
        execute_block(blocks[0], base_state, threads,
                      txn_cost=config.txn_cost)          # warm-up, unmeasured
        stats = Stats()
        elapsed = 0.0
        results = []
        for block in blocks[1:]:
            started = time.perf_counter()
            result = execute_block(block, base_state, threads,
                                   txn_cost=config.txn_cost,
                                   event_log_path=config.event_log,
                                   record_events=config.event_log is not None)
            elapsed += time.perf_counter() - started
            stats.merge(result.stats)
            results.append(result)
        if config.verify:
            for block, result in zip(blocks[1:], results):
                reference = sequential_execute_block(block, base_state)
                problem = _mismatch(result, reference, base_state)
                if problem is not None:
                    print(f"verification failed ({threads} threads): {problem}",
                          file=sys.stderr)
                    return 1
        total = config.blocks * config.block_size
        tps = total / elapsed if elapsed else 0.0
        row = {
            "workload": spec.kind, "mode": spec.mode, "threads": threads,
            "block_size": config.block_size, "blocks": config.blocks,
            "seed": spec.seed, "total_txns": total,
            "elapsed_ms": round(elapsed * 1000, 3), "tps": round(tps, 1),
            "aborts": stats.aborts, "commit_reexecs": stats.commit_reexecs,
            "spec_failures": stats.spec_failures,
        }
        rows.append(row)
        print(f"{spec.kind:<10} mode={spec.mode:<8} threads={threads:<3} "
              f"tps={tps:>10.1f} aborts={stats.aborts} "
              f"reexecs={stats.commit_reexecs} "
              f"spec_failures={stats.spec_failures}")
    if config.csv_path:
        _write_csv(config.csv_path, rows)
    return 0


def _write_csv(path: str, rows) -> None:
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        if fresh:
            writer.writeheader()
        writer.writerows(rows)


def _parse_threads(raw: str) -> tuple:
    return tuple(int(part) for part in raw.split(",") if part)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deferred-stm-bench",
        description="Throughput benchmarks for the deferred execution engine")
    parser.add_argument("--workload", required=True, choices=KINDS)
    parser.add_argument("--mode", default="deferred", choices=MODES)
    parser.add_argument("--payers", type=int, default=1)
    parser.add_argument("--n", type=int, default=1)
    parser.add_argument("--reveal-fraction", type=float, default=0.5)
    parser.add_argument("--limit", type=int, default=None)
    parser.add_argument("--pattern", default="",
                        choices=("", "random", "single_receiver"))
    parser.add_argument("--accounts", type=int, default=20_000)
    parser.add_argument("--blocks", type=int, default=3)
    parser.add_argument("--block-size", type=int, default=1000)
    parser.add_argument("--threads", default=None,
                        help="comma separated list, e.g. 1,2,4,8")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verify", action="store_true",
                        help="compare every block against the sequential oracle")
    parser.add_argument("--csv", dest="csv_path", default=None)
    parser.add_argument("--event-log", default=None,
                        help="write scheduler events of the last block here")
    parser.add_argument("--txn-cost-us", type=float, default=0.0,
                        help="simulated contract cost per execution, microseconds")
    return parser


def config_from_args(args) -> BenchConfig:
    raw_threads = args.threads or os.environ.get(WORKERS_ENV) or "1"
    spec = WorkloadSpec(
        kind=args.workload, mode=args.mode, payers=args.payers, n=args.n,
        reveal_fraction=args.reveal_fraction, limit=args.limit,
        pattern=args.pattern, accounts=args.accounts, seed=args.seed)
    return BenchConfig(
        workload=spec, blocks=args.blocks, block_size=args.block_size,
        threads=_parse_threads(str(raw_threads)), verify=args.verify,
        csv_path=args.csv_path, txn_cost=args.txn_cost_us / 1e6,
        event_log=args.event_log)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ValueError as err:
        print(f"invalid configuration: {err}", file=sys.stderr)
        return 2
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
