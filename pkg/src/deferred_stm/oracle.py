"""Sequential reference executor and generic log replay.

The sequential executor runs transactions one by one against an evolving
state with exact deferred arithmetic; the parallel engine's output must
match it byte for byte. The replay half implements the general deferred
log model (arbitrary update functions, map prefixes, combine) over a store
of per-transaction logs; the engine restricts itself to bounded counters
plus one formatting map, but the replay machinery covers the full model
and doubles as an independent oracle for it.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from .deferred import (
    DeferredId,
    DerivedValueDelta,
    FormatterSpec,
    InitNone,
    InitValue,
    Revealed,
    U64_MAX,
    Update,
    ValueDelta,
)
from .errors import MissingLog
from .executor import BlockOutput, FinalTxnOutput, Stats
from .state import BaseState
from .txn import execute_transaction, patch_placeholders


# --- generic log model -------------------------------------------------------

@dataclass(frozen=True)
class FuncSpec:
    """A function from the fixed, serializable library.

    Logs must stay plain data, so update/map/combine functions are named
    library members instead of closures:

        add(k), sub(k)  counter shifts
        clamp           clamp into [0, 2^64-1]
        format          decimal rendering between prefix/suffix bytes
        concat          append fixed bytes to a byte string
        avg2            binary: floor average of two counters
    """

    name: str
    arg: object = None

    def apply(self, value):
        if self.name == "add":
            return value + self.arg
        if self.name == "sub":
            return value - self.arg
        if self.name == "clamp":
            return min(max(value, 0), U64_MAX)
        if self.name == "format":
            prefix, suffix = self.arg
            return FormatterSpec(prefix, suffix).render(value)
        if self.name == "concat":
            return value + self.arg
        raise ValueError(f"{self.name} is not a unary function")

    def apply2(self, left, right):
        if self.name == "avg2":
            return (left + right) // 2
        raise ValueError(f"{self.name} is not a binary function")


def add(k: int) -> FuncSpec:
    return FuncSpec("add", k)


def sub(k: int) -> FuncSpec:
    return FuncSpec("sub", k)


CLAMP = FuncSpec("clamp")
AVG2 = FuncSpec("avg2")


def fmt(prefix: bytes = b"", suffix: bytes = b"") -> FuncSpec:
    return FuncSpec("format", (prefix, suffix))


def concat(suffix: bytes) -> FuncSpec:
    return FuncSpec("concat", suffix)


@dataclass(frozen=True)
class GenUpdate:
    fn: FuncSpec
    predicted: bool


@dataclass(frozen=True)
class GenInitPrefix:
    fn: FuncSpec
    source: DeferredId
    prefix_len: int            # number of operation rows of the source log
    predicted: bool = True


@dataclass(frozen=True)
class GenInitCombine:
    fn: FuncSpec
    source_a: DeferredId
    prefix_a: int
    source_b: DeferredId
    prefix_b: int
    predicted: bool = True


class LogStore:
    """Per-transaction logs for an executed block prefix, append only."""

    def __init__(self):
        self._logs = {}            # txn -> {id: tuple(entries)}
        self._by_id = {}           # id -> ascending txn indices

    def add(self, txn: int, deferred_id: DeferredId, entries) -> None:
        per_txn = self._logs.setdefault(txn, {})
        if deferred_id in per_txn:
            raise ValueError(f"txn {txn} already holds a log for {deferred_id}")
        per_txn[deferred_id] = tuple(entries)
        txns = self._by_id.setdefault(deferred_id, [])
        if txns and txns[-1] >= txn:
            raise ValueError("logs must be added in transaction order")
        txns.append(txn)

    def log(self, deferred_id: DeferredId, txn: int):
        per_txn = self._logs.get(txn)
        return per_txn.get(deferred_id) if per_txn else None

    def latest_txn(self, deferred_id: DeferredId, limit: int,
                   inclusive: bool) -> Optional[int]:
        """Largest txn holding a log for the id, <= or < limit."""
        best = None
        for txn in self._by_id.get(deferred_id, ()):
            if txn < limit or (inclusive and txn == limit):
                best = txn
            else:
                break
        return best

    def ids(self):
        return self._by_id.keys()

    def last_writer(self, deferred_id: DeferredId) -> Optional[int]:
        txns = self._by_id.get(deferred_id)
        return txns[-1] if txns else None


def _replay_ops(entries, upto: int, value):
    for entry in entries[1:upto + 1]:
        kind = type(entry)
        if kind is Revealed:
            return entry.value           # ground truth, returned immediately
        if kind is GenUpdate:
            if entry.predicted and value is not None:
                value = entry.fn.apply(value)
        elif kind is Update:
            if entry.predicted and value is not None:
                value = value + entry.amount
        else:
            raise MissingLog(f"unexpected log entry {entry!r}")
    return value


def replay_reveal(a: DeferredId, i: int, j: int, store: LogStore,
                  state: BaseState):
    """Value of deferred object `a` in txn i after its j-th logged operation.

    Row 0 decides the starting value: a created value is used directly; a
    map prefix replays the source log at the recorded position in the
    largest txn k <= i holding one; `none` replays the full log of the
    largest txn k < i holding one, bottoming out at the storage base.
    (The <= vs < asymmetry is deliberate: a map's prefix points into the
    mapping transaction's own log, an inherited object's history lives
    strictly before it.)
    """
    frames = []
    cur_a, cur_i, cur_j = a, i, j
    while True:
        log = store.log(cur_a, cur_i)
        if log is None:
            raise MissingLog(f"txn {cur_i} has no log for {cur_a}")
        frames.append((log, cur_j))
        row0 = log[0]
        kind = type(row0)
        if kind is InitValue:
            base = row0.value
            break
        if kind is GenInitPrefix:
            k = store.latest_txn(row0.source, cur_i, inclusive=True)
            if k is None:
                raise MissingLog(f"no log for map source {row0.source}")
            inner = replay_reveal(row0.source, k, row0.prefix_len, store, state)
            if row0.predicted and inner is not None:
                base = row0.fn.apply(inner)
            else:
                base = None
            break
        if kind is GenInitCombine:
            base = replay_combine(row0, cur_i, store, state)
            break
        if kind is InitNone:
            k = store.latest_txn(cur_a, cur_i, inclusive=False)
            if k is None:
                base = state.get_deferred_base(cur_a)
                if base is None:
                    raise MissingLog(f"no ancestor log or storage base for {cur_a}")
                break
            prev = store.log(cur_a, k)
            cur_i, cur_j = k, len(prev) - 1
            continue
        raise MissingLog(f"unexpected init row {row0!r}")

    value = base
    for log, upto in reversed(frames):
        value = _replay_ops(log, upto, value)
    return value


def replay_combine(entry: GenInitCombine, txn: int, store: LogStore,
                   state: BaseState):
    """Resolve both combine prefixes; absent when the precondition failed."""
    ka = store.latest_txn(entry.source_a, txn, inclusive=True)
    kb = store.latest_txn(entry.source_b, txn, inclusive=True)
    if ka is None or kb is None:
        raise MissingLog("combine source has no log")
    left = replay_reveal(entry.source_a, ka, entry.prefix_a, store, state)
    right = replay_reveal(entry.source_b, kb, entry.prefix_b, store, state)
    if not entry.predicted or left is None or right is None:
        return None
    return entry.fn.apply2(left, right)


# --- sequential executor -----------------------------------------------------

class _OracleEnv:
    exact = True
    debug_logs = False
    __slots__ = ("_overlay", "_state", "_deferred")

    def __init__(self, overlay, base_state, deferred):
        self._overlay = overlay
        self._state = base_state
        self._deferred = deferred

    def read_data(self, key):
        if key in self._overlay:
            return self._overlay[key], None
        return self._state.get(key), None

    def exact_value(self, deferred_id):
        try:
            return self._deferred[deferred_id]
        except KeyError:
            raise MissingLog(f"{deferred_id} does not exist") from None

    def committed_base(self, deferred_id):
        return self._deferred.get(deferred_id)

    def storage_base(self, deferred_id):
        return self._state.get_deferred_base(deferred_id)


class _Recorder:
    """Builds generic logs for one transaction as it executes."""

    def __init__(self):
        self.logs = {}

    def init_value(self, deferred_id, value):
        self.logs[deferred_id] = [InitValue(value)]

    def init_none(self, deferred_id):
        self.logs[deferred_id] = [InitNone()]

    def init_prefix(self, derived_id, source_id, formatter):
        prefix_len = len(self.logs[source_id]) - 1
        self.logs[derived_id] = [GenInitPrefix(
            fmt(formatter.prefix, formatter.suffix), source_id, prefix_len)]

    def update(self, deferred_id, amount, successes, count):
        fn = add(amount) if amount >= 0 else sub(-amount)
        log = self.logs[deferred_id]
        log.extend([GenUpdate(fn, True)] * successes)
        log.extend([GenUpdate(fn, False)] * (count - successes))

    def revealed(self, deferred_id, value):
        self.logs[deferred_id].append(Revealed(value))


def sequential_execute_block(block, base_state: BaseState, *,
                             txn_cost: float = 0.0,
                             log_store: Optional[LogStore] = None) -> BlockOutput:
    """Execute a block in order with exact deferred arithmetic.

    When `log_store` is given, the generic logs of every committed effect
    are recorded into it for replay-based cross checks.
    """
    overlay = {}
    deferred = dict(base_state.deferred_bases())
    env = _OracleEnv(overlay, base_state, deferred)
    outputs = []
    touched = set()
    stats = Stats()
    for index, script in enumerate(block):
        stats.executions += 1
        if txn_cost:
            time.sleep(txn_cost)
        recorder = _Recorder() if log_store is not None else None
        output, _ = execute_transaction(script, index, 0, env, recorder)
        finals = {}
        for did, delta in output.delta_set:
            kind = type(delta)
            if kind is ValueDelta:
                finals[did] = delta.value
            elif kind is DerivedValueDelta:
                finals[did] = delta.data
            else:
                raise AssertionError("exact execution emitted a speculative delta")
            deferred[did] = finals[did]
            touched.add(did)
        needed = dict(finals)
        for _, value in output.write_set:
            for _, did, _ in value.slots:
                if did not in needed:
                    needed[did] = deferred.get(did)
        write_set = tuple((key, patch_placeholders(value, needed.__getitem__))
                          for key, value in output.write_set)
        for key, data in write_set:
            overlay[key] = data
        outputs.append(FinalTxnOutput(
            output.status, output.code, write_set,
            tuple((did, finals[did]) for did, _ in output.delta_set),
            output.gas_used))
        if log_store is not None:
            for did, _ in output.delta_set:
                log_store.add(index, did, recorder.logs[did])
    committed = {did: deferred[did] for did in touched}
    return BlockOutput(outputs, committed, stats)
