"""Parallel block executor.

Workers pull tasks from the scheduler. Executions run scripts against the
multi-version structures and record write/delta sets; validations recheck
captured data-read versions; commit hooks run serially in index order and
perform the deferred validations (reveal equality and delta history
against the committed base table), re-executing the transaction exactly at
most once when they fail. Placeholder patching of committed outputs runs
outside the hook, overlapping later work.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from . import scheduler as sched
from .deferred import (
    CompressedDelta,
    DerivedValueDelta,
    SnapshotDelta,
    ValueDelta,
    apply_delta,
    resolve_snapshot,
)
from .errors import (
    Dependency,
    EngineError,
    LengthExceeded,
    SpeculativeFailure,
    UnknownDeferredId,
)
from .mvhashmap import ESTIMATE, MISS, MVData, MVDelayedFields, STORAGE
from .state import BaseState, StateValue
from .txn import CapturedReads, TxnOutput, execute_transaction, patch_placeholders

_IDLE_SLEEP = 0.00002


@dataclass
class Stats:
    executions: int = 0
    validations: int = 0
    aborts: int = 0
    spec_failures: int = 0
    commit_reexecs: int = 0
    dependencies: int = 0

    def merge(self, other: "Stats") -> None:
        self.executions += other.executions
        self.validations += other.validations
        self.aborts += other.aborts
        self.spec_failures += other.spec_failures
        self.commit_reexecs += other.commit_reexecs
        self.dependencies += other.dependencies


@dataclass(frozen=True)
class FinalTxnOutput:
    """A committed transaction's fully materialized output."""

    status: str
    code: Optional[int]
    write_set: tuple          # (key, bytes) pairs, placeholders patched
    deferred_writes: tuple    # (id, final value) pairs in delta-set order
    gas_used: int


@dataclass
class BlockOutput:
    outputs: list
    committed_deferred: dict
    stats: Stats


class _SpecEnv:
    """Execution environment backed by the multi-version structures."""

    exact = False
    __slots__ = ("_data", "_delayed", "_state", "_table", "_index",
                 "debug_logs")

    def __init__(self, data, delayed, base_state, table, index, debug_logs):
        self._data = data
        self._delayed = delayed
        self._state = base_state
        self._table = table
        self._index = index
        self.debug_logs = debug_logs

    def read_data(self, key):
        result = self._data.data_read(key, self._index)
        if result is MISS:
            return self._state.get(key), STORAGE
        value, version = result
        if type(value) is StateValue:
            value = value.data
        return value, version

    def traverse(self, deferred_id):
        return self._delayed.delayed_read(deferred_id, self._index)

    def committed_base(self, deferred_id):
        return self._table.get(deferred_id)

    def storage_base(self, deferred_id):
        return self._state.get_deferred_base(deferred_id)


class _CommitEnv:
    """Exact environment for commit-time re-execution.

    Everything below the committing transaction is final: data reads come
    from the multi-version structure (which holds all committed writes)
    and deferred values come straight from the committed base table.
    """

    exact = True
    debug_logs = False
    __slots__ = ("_data", "_state", "_table", "_index")

    def __init__(self, data, base_state, table, index):
        self._data = data
        self._state = base_state
        self._table = table
        self._index = index

    def read_data(self, key):
        result = self._data.data_read(key, self._index)
        if result is MISS:
            return self._state.get(key), STORAGE
        value, version = result
        if type(value) is StateValue:
            value = value.data
        return value, version

    def exact_value(self, deferred_id):
        value = self._table.get(deferred_id)
        if value is None:
            raise UnknownDeferredId(str(deferred_id))
        return value

    def committed_base(self, deferred_id):
        return self._table.get(deferred_id)

    def storage_base(self, deferred_id):
        return self._state.get_deferred_base(deferred_id)


class _Run:
    """Shared state for one execute_block invocation."""

    def __init__(self, block, base_state, workers, txn_cost, debug_logs,
                 record_events):
        self.block = block
        self.state = base_state
        self.workers = workers
        self.txn_cost = txn_cost
        self.debug_logs = debug_logs
        n = len(block)
        self.scheduler = sched.Scheduler(n, record_events=record_events)
        self.mvdata = MVData()
        self.mvdelayed = MVDelayedFields(base_state)
        self.table = dict(base_state.deferred_bases())
        self.recorded = [None] * n        # (TxnOutput, CapturedReads)
        self.resolved = [None] * n        # hook-time values for patching
        self.final = [None] * n           # FinalTxnOutput
        self.reexecuted = [False] * n
        self.touched_ids = set()
        self.failure = None


def execute_block(block, base_state: BaseState, workers: int = 1, seed=None,
                  *, txn_cost: float = 0.0, debug_logs: bool = False,
                  record_events: bool = False, event_log_path=None) -> BlockOutput:
    """Execute a block in parallel; output equals the sequential order.

    `txn_cost` simulates per-execution contract cost as a sleep (seconds);
    it models the VM work that dominates real deployments and is the knob
    benchmarks use, since pure interpreter work cannot scale across
    threads on a GIL build. `seed` is accepted for interface stability;
    scheduling under real threads is timing driven.
    """
    del seed
    if workers < 1:
        raise ValueError("need at least one worker")
    run = _Run(block, base_state, workers, txn_cost, debug_logs, record_events)
    if not block:
        return BlockOutput([], {}, Stats())

    if workers == 1:
        stats = Stats()
        _worker_loop(run, 0, stats)
    else:
        stats_per = [Stats() for _ in range(workers)]
        threads = [
            threading.Thread(target=_worker_loop, args=(run, w, stats_per[w]),
                             name=f"stm-worker-{w}", daemon=True)
            for w in range(workers)
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        stats = Stats()
        for s in stats_per:
            stats.merge(s)

    if run.failure is not None:
        raise run.failure
    if event_log_path is not None and run.scheduler.events is not None:
        run.scheduler.dump_events(event_log_path)
    committed = {did: run.table[did] for did in run.touched_ids}
    return BlockOutput(list(run.final), committed, stats)


def _worker_loop(run: _Run, worker: int, stats: Stats) -> None:
    scheduler = run.scheduler
    try:
        while True:
            task = scheduler.next_task(worker)
            if task is None:
                time.sleep(_IDLE_SLEEP)
                continue
            kind = task[0]
            if kind == sched.EXECUTE:
                _run_execution(run, task[1], task[2], stats)
            elif kind == sched.VALIDATE:
                _run_validation(run, task[1], task[2], task[3], stats, worker)
            elif kind == sched.COMMIT:
                index = task[1]
                _commit_transaction(run, index, stats)
                scheduler.finish_commit(index, worker)
                _post_commit_patch(run, index)
            else:
                return
    except BaseException as exc:                       # engine bug: fail fast
        run.failure = exc
        scheduler.commit_idx = scheduler.n             # unblock done()


def _run_execution(run: _Run, index: int, incarnation: int,
                   stats: Stats) -> None:
    scheduler = run.scheduler
    env = _SpecEnv(run.mvdata, run.mvdelayed, run.state, run.table, index,
                   run.debug_logs)
    while True:
        stats.executions += 1
        if run.txn_cost:
            time.sleep(run.txn_cost)
        try:
            output, captured = execute_transaction(
                run.block[index], index, incarnation, env)
        except Dependency as dep:
            stats.dependencies += 1
            if scheduler.add_dependency(index, dep.blocking):
                return
            continue                                   # blocker finished, retry
        except SpeculativeFailure:
            stats.spec_failures += 1
            if scheduler.abort_for_speculation(index, incarnation):
                run.mvdata.mark_estimates(index)
                run.mvdelayed.mark_estimates(index)
                scheduler.finish_abort(index, incarnation)
            return
        run.recorded[index] = (output, captured)
        wrote_new = run.mvdata.apply_write_set(index, incarnation,
                                               output.write_set)
        run.mvdelayed.delayed_record(index, output.delta_set)
        scheduler.finish_execution(index, incarnation, wrote_new)
        return


def _run_validation(run: _Run, index: int, incarnation: int, wave: int,
                    stats: Stats, worker: int) -> None:
    scheduler = run.scheduler
    stats.validations += 1
    recorded = run.recorded[index]
    ok = recorded is not None and _reads_still_valid(run, index, recorded[1])
    must_abort = scheduler.finish_validation(index, incarnation, wave, ok,
                                             worker)
    if must_abort:
        stats.aborts += 1
        run.mvdata.mark_estimates(index)
        run.mvdelayed.mark_estimates(index)
        scheduler.finish_abort(index, incarnation, worker)


def _reads_still_valid(run: _Run, index: int, captured: CapturedReads) -> bool:
    read_version = run.mvdata.read_version
    for key, version in captured.data_reads:
        current = read_version(key, index)
        if current is ESTIMATE or current != version:
            return False
    return True


def _commit_transaction(run: _Run, index: int, stats: Stats) -> None:
    """Deferred validation and fold, re-executing exactly at most once.

    Reveal values must equal the committed base table entries, compressed
    deltas must history-validate against them, and derived snapshots must
    render. No delta traversal happens here; every value is a table read.
    """
    output, captured = run.recorded[index]
    finals = _validate_and_fold(run, index, output, captured)
    if finals is None:
        incarnation = run.scheduler.reincarnate_for_commit(index)
        stats.commit_reexecs += 1
        if run.reexecuted[index]:
            raise EngineError(f"txn {index} re-executed twice at commit")
        run.reexecuted[index] = True
        if run.txn_cost:
            time.sleep(run.txn_cost)
        env = _CommitEnv(run.mvdata, run.state, run.table, index)
        output, captured = execute_transaction(run.block[index], index,
                                               incarnation, env)
        run.recorded[index] = (output, captured)
        run.mvdata.apply_write_set(index, incarnation, output.write_set)
        run.mvdelayed.delayed_record(index, output.delta_set)
        run.scheduler.schedule_suffix_validation(index + 1)
        finals = _validate_and_fold(run, index, output, captured)
        if finals is None:
            raise EngineError(f"exact re-execution of txn {index} failed "
                              "deferred validation")
    for did, value in finals.items():
        run.table[did] = value
        run.touched_ids.add(did)
        run.mvdelayed.delayed_set_committed(did, index, value)
    # Patching happens outside the hook while later commits mutate the
    # table, so snapshot every value the patch will need now.
    needed = dict(finals)
    for _, value in output.write_set:
        for _, did, _ in value.slots:
            if did not in needed:
                needed[did] = run.table.get(did)
    run.resolved[index] = (
        needed,
        tuple((did, finals[did]) for did, _ in output.delta_set),
    )


def _validate_and_fold(run: _Run, index: int, output: TxnOutput,
                       captured: CapturedReads):
    """Check reveals and deltas against the committed table; on success
    return the transaction's final deferred values, else None."""
    table = run.table
    for did, value in captured.delayed_reveals:
        if did.creator_txn == index:
            continue                       # locally created, nothing to pin
        if table.get(did) != value:
            return None
    finals = {}
    for did, delta in output.delta_set:
        kind = type(delta)
        if kind is CompressedDelta:
            base = table.get(did)
            if base is None:
                return None
            try:
                finals[did] = apply_delta(delta, base)
            except SpeculativeFailure:
                return None
        elif kind is ValueDelta:
            finals[did] = delta.value
        elif kind is DerivedValueDelta:
            finals[did] = delta.data
        else:                              # SnapshotDelta
            source = table.get(delta.source)
            if source is None:
                return None
            try:
                finals[did] = resolve_snapshot(delta, source)
            except LengthExceeded:
                return None
    return finals


def _post_commit_patch(run: _Run, index: int) -> None:
    """Materialize the committed output; may overlap later transactions."""
    output, _ = run.recorded[index]
    needed, deferred = run.resolved[index]
    resolver = needed.__getitem__
    write_set = tuple((key, patch_placeholders(value, resolver))
                      for key, value in output.write_set)
    run.final[index] = FinalTxnOutput(output.status, output.code, write_set,
                                      deferred, output.gas_used)
