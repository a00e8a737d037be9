"""Deterministic transaction scripts and their interpreter.

Scripts stand in for smart contracts: a fixed list of instructions over
plain balances and deferred counters. The interpreter is shared between
the parallel engine and the sequential oracle; the execution environment
decides whether deferred arithmetic is exact or predicted.

Deferred fields embedded in written values use a placeholder encoding:

    tag 0xD7 | 12-byte id (4B creator, 8B seq, big-endian) | width byte
    | `width` zero bytes

The width byte holds width mod 256 (0x00 denotes 256, the derived-string
width; counters use width 8). Patching overwrites the whole span, header
included, with 14 zero bytes followed by the encoded payload, so the value
length never changes: counters render as 8-byte big-endian integers,
derived strings are left-justified and zero-padded to 256 bytes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Union

from .deferred import (
    Bounds,
    DeferredId,
    DeferredLog,
    DerivedValueDelta,
    FormatterSpec,
    INIT_NONE,
    InitValue,
    LogCompressor,
    Revealed,
    SnapshotDelta,
    Update,
    ValueDelta,
    apply_delta,
    compress_log,
)
from .errors import (
    LengthExceeded,
    ScriptError,
    SpeculativeFailure,
    UnresolvedId,
    WidthMismatch,
)
from .state import StateKey, StateValue, decode_balance, encode_balance

PLACEHOLDER_TAG = 0xD7
PLACEHOLDER_HEADER = 14          # tag + id + width byte
COUNTER_WIDTH = 8
STRING_WIDTH = 256

SUCCESS = "success"
ABORTED = "aborted"

# abort codes
INSUFFICIENT_FUNDS = 1
FEE_INSUFFICIENT = 2
SNAPSHOT_FAILED = 3
SOLD_OUT = 4

Target = Union[DeferredId, int]          # static id or local handle


# --- instructions -----------------------------------------------------------

@dataclass(frozen=True)
class ReadBalance:
    key: StateKey


@dataclass(frozen=True)
class Debit:
    key: StateKey
    amount: int


@dataclass(frozen=True)
class Credit:
    key: StateKey
    amount: int


@dataclass(frozen=True)
class WriteValue:
    key: StateKey
    parts: tuple                 # bytes literals and deferred targets


@dataclass(frozen=True)
class DeferredCreate:
    handle: int
    bounds: Bounds
    init: int


@dataclass(frozen=True)
class DeferredUpdate:
    target: Target
    amount: int
    bounds: Bounds


@dataclass(frozen=True)
class DeferredReveal:
    target: Target
    bounds: Bounds
    store_key: Optional[StateKey] = None


@dataclass(frozen=True)
class DeferredSnapshot:
    handle: int
    target: Target
    formatter: FormatterSpec


@dataclass(frozen=True)
class RepeatUpdate:
    target: Target
    amount: int
    count: int
    bounds: Bounds


@dataclass(frozen=True)
class AbortIf:
    """Abort with `code` when the most recent deferred update failed."""

    code: int


@dataclass(frozen=True)
class ChargeFee:
    """Charge `amount` from the payer and burn it from the supply target.

    Both targets are decremented. Targets may be plain balance keys or
    deferred counters. Fee effects survive a later AbortIf; scripts must
    not touch fee targets again after charging.
    """

    payer: Union[StateKey, DeferredId]
    amount: int
    burn: Union[StateKey, DeferredId]


@dataclass(frozen=True)
class TxnScript:
    ops: tuple
    label: str = ""


@dataclass(frozen=True)
class CapturedReads:
    data_reads: tuple            # (key, version) pairs, first-read order
    delayed_reveals: tuple       # (id, pre-transaction value) pairs
    delta_set: tuple


@dataclass(frozen=True)
class TxnOutput:
    status: str
    code: Optional[int]
    write_set: tuple             # (key, StateValue) pairs
    delta_set: tuple             # (id, delta) pairs
    gas_used: int


def predict_update(deferred_id, local_sum: int, amount: int,
                   committed_base: Optional[int], storage_base: Optional[int],
                   bounds: Bounds) -> bool:
    """Predict a bounded update's outcome from the best known base value."""
    base = committed_base if committed_base is not None else storage_base
    if base is None:
        raise SpeculativeFailure(f"no base to predict against for {deferred_id}")
    return bounds.contains(base + local_sum + amount)


def successful_run(base: int, local_sum: int, amount: int, count: int,
                   bounds: Bounds) -> int:
    """Leading successes when repeating `amount` against a fixed base.

    Once one repeat fails the running sum freezes, so every later repeat
    fails at the same offset; successes are always a prefix.
    """
    if count <= 0:
        return 0
    first = base + local_sum + amount
    if not bounds.contains(first):
        return 0
    if amount > 0:
        k = (bounds.upper - base - local_sum) // amount
    elif amount < 0:
        k = (base + local_sum - bounds.lower) // (-amount)
    else:
        return count
    return count if k >= count else k


# --- placeholders -----------------------------------------------------------

def encode_placeholder(deferred_id: DeferredId, width: int) -> bytes:
    return (bytes([PLACEHOLDER_TAG]) + deferred_id.encode()
            + bytes([width & 0xFF]) + b"\x00" * width)


def patch_placeholders(value: StateValue, resolver: Callable) -> bytes:
    """Replace every placeholder span with its final value, in place.

    `resolver` maps a DeferredId to its committed value. The output has
    exactly the input's length.
    """
    if not value.slots:
        return value.data
    buf = bytearray(value.data)
    for offset, did, width in value.slots:
        try:
            resolved = resolver(did)
        except KeyError:
            resolved = None
        if resolved is None:
            raise UnresolvedId(f"no final value for {did}")
        if width == COUNTER_WIDTH:
            if not isinstance(resolved, int) or not 0 <= resolved < (1 << 64):
                raise WidthMismatch(f"counter slot cannot hold {resolved!r}")
            payload = resolved.to_bytes(COUNTER_WIDTH, "big")
        elif width == STRING_WIDTH:
            if not isinstance(resolved, bytes) or len(resolved) > STRING_WIDTH:
                raise WidthMismatch(f"string slot cannot hold {resolved!r}")
            payload = resolved.ljust(STRING_WIDTH, b"\x00")
        else:
            raise WidthMismatch(f"unsupported placeholder width {width}")
        buf[offset:offset + PLACEHOLDER_HEADER + width] = (
            b"\x00" * PLACEHOLDER_HEADER + payload)
    return bytes(buf)


# --- interpreter ------------------------------------------------------------

class _Abort(Exception):
    def __init__(self, code, keep_fees):
        self.code = code
        self.keep_fees = keep_fees


class _Obj:
    __slots__ = ("id", "bounds", "kind", "exact", "value", "comp",
                 "fee", "snapped", "entries")

    def __init__(self, did, bounds, kind, exact, value=None):
        self.id = did
        self.bounds = bounds
        self.kind = kind              # "counter" or "derived"
        self.exact = exact
        self.value = value            # int (counter) or bytes (derived)
        self.comp = None if exact else LogCompressor()
        self.fee = False
        self.snapped = False
        self.entries = None           # full log entries kept in debug mode


class _Ctx:
    """One transaction execution: local objects, writes, captures."""

    def __init__(self, index, env, recorder, debug_logs):
        self.index = index
        self.env = env
        self.recorder = recorder
        self.debug = debug_logs
        self.next_seq = 0
        self.objects = {}             # target (id or handle) -> _Obj
        self.order = []               # first-touch order of _Obj
        self.writes = {}              # key -> StateValue
        self.write_order = []
        self.fee_keys = set()
        self.reads = {}               # key -> version
        self.read_order = []
        self.reveals = []
        self.last_update_ok = True
        self.gas = 0
        self.in_fee = False

    def alloc_id(self):
        did = DeferredId(self.index, self.next_seq)
        self.next_seq += 1
        return did

    # -- plain state ----------------------------------------------------

    def read_data(self, key):
        value, version = self.env.read_data(key)
        if key not in self.reads:
            self.reads[key] = version
            self.read_order.append(key)
        return value

    def read_balance(self, key):
        raw = self.read_data(key)
        return decode_balance(raw) if raw is not None else 0

    def write(self, key, value: StateValue):
        if key not in self.writes:
            self.write_order.append(key)
        self.writes[key] = value
        if self.in_fee:
            self.fee_keys.add(key)

    # -- deferred objects -------------------------------------------------

    def obj_for(self, target, bounds):
        """First touch of a pre-existing object; first-touch bounds stick."""
        obj = self.objects.get(target)
        if obj is not None:
            return obj
        if isinstance(target, int):
            raise ScriptError(f"handle {target} used before creation")
        if self.env.exact:
            value = self.env.exact_value(target)
            kind = "counter" if isinstance(value, int) else "derived"
            obj = _Obj(target, bounds, kind, True, value)
        else:
            obj = _Obj(target, bounds, "counter", False)
            if self.debug:
                obj.entries = [INIT_NONE]
        self.objects[target] = obj
        self.order.append(obj)
        obj.fee = self.in_fee
        if self.recorder is not None:
            self.recorder.init_none(target)
        return obj

    def create(self, handle, bounds, init):
        if handle in self.objects:
            raise ScriptError(f"handle {handle} created twice")
        if not bounds.contains(init):
            raise ScriptError("initial value out of bounds")
        did = self.alloc_id()
        obj = _Obj(did, bounds, "counter", True, init)
        if self.debug:
            obj.entries = [InitValue(init)]
        self.objects[handle] = obj
        self.order.append(obj)
        obj.fee = self.in_fee
        if self.recorder is not None:
            self.recorder.init_value(did, init)
        return obj

    def update(self, target, amount, bounds, count=1):
        obj = self.obj_for(target, bounds)
        if obj.kind != "counter":
            raise ScriptError("derived strings cannot be updated")
        if obj.exact:
            successes = successful_run(obj.value, 0, amount, count, obj.bounds)
            obj.value += amount * successes
            ok = successes == count
        else:
            committed = self.env.committed_base(obj.id)
            storage = self.env.storage_base(obj.id)
            if count == 1:
                ok = predict_update(obj.id, obj.comp.sum, amount,
                                    committed, storage, obj.bounds)
                successes = 1 if ok else 0
            else:
                base = committed if committed is not None else storage
                if base is None:
                    raise SpeculativeFailure(
                        f"no base to predict against for {obj.id}")
                successes = successful_run(base, obj.comp.sum, amount,
                                           count, obj.bounds)
                ok = successes == count
            obj.comp.add_applied_run(amount, successes)
            obj.comp.add_failed_run(amount, count - successes)
            if self.debug:
                obj.entries.extend([Update(amount, True)] * successes)
                obj.entries.extend([Update(amount, False)] * (count - successes))
        if self.recorder is not None:
            self.recorder.update(obj.id, amount, successes, count)
        self.last_update_ok = ok
        return ok

    def reveal(self, target, bounds):
        """Concrete value of a deferred object; validates local history.

        The first speculative reveal of an object traverses to its
        pre-transaction value, checks the locally accumulated history
        against it (so every prediction so far is pinned), and captures
        the (id, base) pair for commit-time validation. Reveals of exact
        objects need no capture.
        """
        obj = self.obj_for(target, bounds)
        if obj.exact:
            value = obj.value
        elif obj.kind == "derived":
            value = self._reveal_snapshot(obj)
        else:
            base = self.env.traverse(obj.id)
            if isinstance(base, bytes):
                if obj.comp.entries:
                    raise SpeculativeFailure(
                        "updates recorded against a derived string")
                obj.kind = "derived"
                value = base
                self.reveals.append((obj.id, base))
            else:
                delta = obj.comp.delta(obj.bounds, obj.id)
                value = apply_delta(delta, base)
                self.reveals.append((obj.id, base))
                if self.debug:
                    obj.entries.append(Revealed(value))
            obj.exact = True
            obj.value = value
        if self.recorder is not None:
            self.recorder.revealed(obj.id, value)
        return value

    def snapshot(self, handle, target, formatter):
        src = self.objects.get(target)
        if src is None:
            if isinstance(target, int):
                raise ScriptError(f"handle {target} used before creation")
            src = self.obj_for(target, Bounds())
        if src.kind != "counter":
            raise ScriptError("only counters can be snapshot")
        if src.snapped:
            raise ScriptError(f"{src.id} already snapshot once")
        src.snapped = True
        did = self.alloc_id()
        if src.exact:
            try:
                data = formatter.render(src.value)
            except LengthExceeded:
                raise _Abort(SNAPSHOT_FAILED, keep_fees=True)
            obj = _Obj(did, src.bounds, "derived", True, data)
        else:
            obj = _Obj(did, src.bounds, "derived", False)
            # value holds the prepared delta until the snapshot is revealed
            obj.value = SnapshotDelta(src.id, src.comp.sum, formatter)
        self.objects[handle] = obj
        self.order.append(obj)
        obj.fee = self.in_fee
        if self.recorder is not None:
            self.recorder.init_prefix(did, src.id, formatter)
        return obj

    def _reveal_snapshot(self, obj):
        snap = obj.value
        base = self.env.traverse(snap.source)
        if not isinstance(base, int):
            raise SpeculativeFailure(
                f"{snap.source} did not traverse to a counter")
        # Revealing the source validates its local history against the
        # traversed base, which pins every prediction the snapshot's
        # prefix depends on; the render is then exact.
        src = self.objects.get(snap.source)
        if src is not None and not src.exact:
            delta = src.comp.delta(src.bounds, src.id)
            value = apply_delta(delta, base)
            self.reveals.append((src.id, base))
            src.exact = True
            src.value = value
        data = snap.formatter.render(base + snap.prefix_sum)
        obj.exact = True
        obj.value = data
        return data

    def emit_delta(self, obj):
        if obj.kind == "derived":
            if obj.exact:
                return DerivedValueDelta(obj.value)
            return obj.value                      # prepared SnapshotDelta
        if obj.exact:
            return ValueDelta(obj.value)
        delta = obj.comp.delta(obj.bounds, obj.id)
        if self.debug:
            log = DeferredLog(obj.id, obj.bounds, tuple(obj.entries))
            if compress_log(log) != delta:
                raise AssertionError(
                    "incremental compression diverged from compress_log")
        return delta


def execute_transaction(script: TxnScript, index: int, incarnation: int, env,
                        recorder=None):
    """Run a script against an execution environment.

    Returns (TxnOutput, CapturedReads). Deterministic given the values the
    environment serves. Raises Dependency or SpeculativeFailure out of
    speculative environments; those are scheduler concerns.
    """
    ctx = _Ctx(index, env, recorder, getattr(env, "debug_logs", False))
    try:
        for op in script.ops:
            kind = type(op)
            if kind is ChargeFee:
                ctx.in_fee = True
                _charge_one(ctx, op.payer, op.amount)
                _charge_one(ctx, op.burn, op.amount)
                ctx.gas += op.amount
                ctx.in_fee = False
            elif kind is Debit:
                balance = ctx.read_balance(op.key)
                if balance < op.amount:
                    raise _Abort(INSUFFICIENT_FUNDS, keep_fees=True)
                ctx.write(op.key, StateValue(encode_balance(balance - op.amount)))
            elif kind is Credit:
                balance = ctx.read_balance(op.key)
                total = (balance + op.amount) & ((1 << 64) - 1)
                ctx.write(op.key, StateValue(encode_balance(total)))
            elif kind is DeferredUpdate:
                ctx.update(op.target, op.amount, op.bounds)
            elif kind is RepeatUpdate:
                ctx.update(op.target, op.amount, op.bounds, op.count)
            elif kind is AbortIf:
                if not ctx.last_update_ok:
                    raise _Abort(op.code, keep_fees=True)
            elif kind is DeferredSnapshot:
                ctx.snapshot(op.handle, op.target, op.formatter)
            elif kind is WriteValue:
                ctx.write(op.key, _render_parts(ctx, op.parts))
            elif kind is DeferredReveal:
                value = ctx.reveal(op.target, op.bounds)
                if op.store_key is not None:
                    if not isinstance(value, int):
                        raise ScriptError("store_key requires a counter reveal")
                    ctx.write(op.store_key, StateValue(encode_balance(value)))
            elif kind is DeferredCreate:
                ctx.create(op.handle, op.bounds, op.init)
            elif kind is ReadBalance:
                ctx.read_balance(op.key)
            else:
                raise ScriptError(f"unknown instruction {op!r}")
    except _Abort as abort:
        return _finish(ctx, ABORTED, abort.code, abort.keep_fees)
    return _finish(ctx, SUCCESS, None, None)


def _charge_one(ctx: _Ctx, target, amount: int) -> None:
    if isinstance(target, DeferredId):
        ok = ctx.update(target, -amount, Bounds())
        if not ok:
            raise _Abort(FEE_INSUFFICIENT, keep_fees=False)
    else:
        balance = ctx.read_balance(target)
        if balance < amount:
            raise _Abort(FEE_INSUFFICIENT, keep_fees=False)
        ctx.write(target, StateValue(encode_balance(balance - amount)))


def _render_parts(ctx: _Ctx, parts) -> StateValue:
    chunks = []
    slots = []
    offset = 0
    for part in parts:
        if isinstance(part, bytes):
            chunks.append(part)
            offset += len(part)
            continue
        obj = ctx.objects.get(part)
        if obj is None:
            if isinstance(part, int):
                raise ScriptError(f"handle {part} used before creation")
            obj = ctx.obj_for(part, Bounds())
        width = COUNTER_WIDTH if obj.kind == "counter" else STRING_WIDTH
        slots.append((offset, obj.id, width))
        raw = encode_placeholder(obj.id, width)
        chunks.append(raw)
        offset += len(raw)
    return StateValue(b"".join(chunks), tuple(slots))


def _finish(ctx: _Ctx, status, code, keep_fees):
    if status == SUCCESS:
        write_set = tuple((k, ctx.writes[k]) for k in ctx.write_order)
        delta_set = tuple((o.id, ctx.emit_delta(o)) for o in ctx.order)
        gas = ctx.gas
    elif keep_fees:
        write_set = tuple((k, ctx.writes[k]) for k in ctx.write_order
                          if k in ctx.fee_keys)
        delta_set = tuple((o.id, ctx.emit_delta(o)) for o in ctx.order if o.fee)
        gas = ctx.gas
    else:
        write_set = ()
        delta_set = ()
        gas = 0
    output = TxnOutput(status, code, write_set, delta_set, gas)
    captured = CapturedReads(
        tuple((k, ctx.reads[k]) for k in ctx.read_order),
        tuple(ctx.reveals),
        delta_set,
    )
    return output, captured
