"""Deferred counter semantics: logs, compression, deltas, and merging.

A deferred counter accumulates bounded add/subtract updates whose outcomes
were predicted rather than computed. A full log of such updates can be
compressed into a delta: the signed sum of the applied updates plus four
history constraints that, checked against any base value, decide whether
the prediction outcomes would replay identically from that base.

History constraints use a signed-offset encoding. Let c_t be the running
sum of applied updates after the t-th applied entry (c_0 = 0):

    max_achieved  = max over t of c_t (>= 0)
    min_achieved  = min over t of c_t (<= 0)
    min_overflow  = least offset o = c + x of a failed entry with o > 0
    max_underflow = greatest (least magnitude) offset o of a failed entry
                    with o < 0

A failed update with positive offset must have overflowed the upper bound
(the predicted base sits inside the bounds), and one with negative offset
must have underflowed, so each failed entry pins exactly one of the two
optional constraints. Replaying from base b then succeeds identically iff

    b + max_achieved <= U        and  b + min_achieved >= L
    b + min_overflow  > U (if set) and b + max_underflow < L (if set)

All arithmetic is unbounded Python integers, so intermediate sums near the
64-bit range never wrap.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple, Union

from .errors import (
    BoundsMismatch,
    LengthExceeded,
    MalformedLog,
    SpeculativeFailure,
)

U64_MAX = (1 << 64) - 1

# Creator index used for deferred objects that exist before the block.
PRE_BLOCK = 0xFFFF_FFFF

MAX_DERIVED_LEN = 256


@dataclass(frozen=True)
class DeferredId:
    """Identity of a deferred object: (creator txn, per-txn sequence).

    Every incarnation of a transaction allocates the same sequence numbers,
    so ids are stable across re-executions.
    """

    creator_txn: int
    local_seq: int

    def encode(self) -> bytes:
        return self.creator_txn.to_bytes(4, "big") + self.local_seq.to_bytes(8, "big")

    def sort_key(self) -> Tuple[int, int]:
        return (self.creator_txn, self.local_seq)

    @classmethod
    def decode(cls, raw: bytes) -> "DeferredId":
        if len(raw) != 12:
            raise ValueError("deferred id encoding is 12 bytes")
        return cls(int.from_bytes(raw[:4], "big"), int.from_bytes(raw[4:], "big"))


def pre_block_id(seq: int) -> DeferredId:
    return DeferredId(PRE_BLOCK, seq)


@dataclass(frozen=True)
class Bounds:
    lower: int = 0
    upper: int = U64_MAX

    def __post_init__(self):
        if self.lower > self.upper:
            raise ValueError(f"bounds [{self.lower}, {self.upper}] are empty")

    def contains(self, value: int) -> bool:
        return self.lower <= value <= self.upper

    @property
    def width(self) -> int:
        return self.upper - self.lower


DEFAULT_BOUNDS = Bounds()


# --- log entries ------------------------------------------------------------

@dataclass(frozen=True)
class InitValue:
    value: int


@dataclass(frozen=True)
class InitNone:
    pass


INIT_NONE = InitNone()


@dataclass(frozen=True)
class InitPrefix:
    source: DeferredId
    prefix_len: int
    predicted: bool = True


@dataclass(frozen=True)
class Update:
    amount: int
    predicted: bool


@dataclass(frozen=True)
class Revealed:
    value: int


_INIT_KINDS = (InitValue, InitNone, InitPrefix)


@dataclass(frozen=True)
class DeferredLog:
    id: DeferredId
    bounds: Bounds
    entries: tuple

    def __post_init__(self):
        if not self.entries or not isinstance(self.entries[0], _INIT_KINDS):
            raise MalformedLog("log must start with an init entry")


# --- deltas -----------------------------------------------------------------

@dataclass(frozen=True)
class HistoryConstraints:
    max_achieved: int = 0
    min_achieved: int = 0
    min_overflow: Optional[int] = None
    max_underflow: Optional[int] = None

    def __post_init__(self):
        if not (self.min_achieved <= 0 <= self.max_achieved):
            raise ValueError("achieved interval must straddle zero")
        if self.min_overflow is not None and self.min_overflow <= self.max_achieved:
            raise ValueError("min_overflow must exceed max_achieved")
        if self.max_underflow is not None and self.max_underflow >= self.min_achieved:
            raise ValueError("max_underflow must be below min_achieved")


EMPTY_HISTORY = HistoryConstraints()


@dataclass(frozen=True)
class ValueDelta:
    """Exact counter value: the log replayed to a known number."""

    value: int


@dataclass(frozen=True)
class DerivedValueDelta:
    """Exact derived string value."""

    data: bytes


@dataclass(frozen=True)
class CompressedDelta:
    """Compressed counter log: signed sum, history constraints, source id.

    `source` equals the counter's own id unless the object was created by
    mapping another counter, in which case traversal redirects there.
    """

    sum: int
    history: HistoryConstraints
    bounds: Bounds
    source: DeferredId


@dataclass(frozen=True)
class FormatterSpec:
    """Decimal rendering of a counter between fixed prefix/suffix bytes."""

    prefix: bytes = b""
    suffix: bytes = b""

    def render(self, value: int) -> bytes:
        out = self.prefix + str(value).encode("ascii") + self.suffix
        if len(out) > MAX_DERIVED_LEN:
            raise LengthExceeded(
                f"derived string is {len(out)} bytes, cap is {MAX_DERIVED_LEN}")
        return out


@dataclass(frozen=True)
class SnapshotDelta:
    """Derived string: formatter applied to a source counter plus an offset.

    `prefix_sum` is the creating transaction's own applied-update sum for
    the source counter at the moment the snapshot was taken, so the final
    string renders source_pre_txn_value + prefix_sum.
    """

    source: DeferredId
    prefix_sum: int
    formatter: FormatterSpec


DeltaOp = Union[ValueDelta, DerivedValueDelta, CompressedDelta, SnapshotDelta]

IDENTITY_DELTA_FIELDS = (0, EMPTY_HISTORY)


class LogCompressor:
    """Incremental compression of a predicted-update stream.

    Equivalent to compress_log over the same entries, but O(1) per update
    and with closed-form handling of repeated identical updates, so a loop
    of n increments costs the same as a single one.
    """

    __slots__ = ("sum", "max_achieved", "min_achieved", "min_overflow",
                 "max_underflow", "entries")

    def __init__(self):
        self.sum = 0
        self.max_achieved = 0
        self.min_achieved = 0
        self.min_overflow = None
        self.max_underflow = None
        self.entries = 0

    def add(self, amount: int, predicted: bool) -> None:
        self.entries += 1
        if predicted:
            c = self.sum + amount
            self.sum = c
            if c > self.max_achieved:
                self.max_achieved = c
            elif c < self.min_achieved:
                self.min_achieved = c
        else:
            self._add_failed(self.sum + amount)

    def add_applied_run(self, amount: int, count: int) -> None:
        """Fold `count` consecutive applied updates of `amount`."""
        if count <= 0:
            return
        self.entries += count
        first = self.sum + amount
        last = self.sum + amount * count
        self.sum = last
        hi = first if first > last else last
        lo = first if first < last else last
        if hi > self.max_achieved:
            self.max_achieved = hi
        if lo < self.min_achieved:
            self.min_achieved = lo

    def add_failed_run(self, amount: int, count: int) -> None:
        """Fold `count` consecutive failed updates of `amount`.

        A failed update does not change the running sum, so every repeat
        records the same violated offset.
        """
        if count <= 0:
            return
        self.entries += count
        self._add_failed(self.sum + amount)

    def _add_failed(self, offset: int) -> None:
        if offset > 0:
            if self.min_overflow is None or offset < self.min_overflow:
                self.min_overflow = offset
        elif offset < 0:
            if self.max_underflow is None or offset > self.max_underflow:
                self.max_underflow = offset
        else:
            # A zero offset can only fail if the predicted base itself sat
            # outside the bounds, which no committed value ever does.
            raise SpeculativeFailure("failed update at zero offset")

    def history(self) -> HistoryConstraints:
        if self.min_overflow is not None and self.min_overflow <= self.max_achieved:
            raise SpeculativeFailure("overflow constraint contradicts achieved range")
        if self.max_underflow is not None and self.max_underflow >= self.min_achieved:
            raise SpeculativeFailure("underflow constraint contradicts achieved range")
        return HistoryConstraints(self.max_achieved, self.min_achieved,
                                  self.min_overflow, self.max_underflow)

    def delta(self, bounds: Bounds, source: DeferredId) -> CompressedDelta:
        return CompressedDelta(self.sum, self.history(), bounds, source)


def _replay_exact(start: int, entries, bounds: Bounds) -> int:
    """Entry-by-entry replay from a known value; flags must agree."""
    lo, hi = bounds.lower, bounds.upper
    cur = start
    for entry in entries:
        if type(entry) is Update:
            attempted = cur + entry.amount
            ok = lo <= attempted <= hi
            if ok:
                cur = attempted
            if ok != entry.predicted:
                raise SpeculativeFailure(
                    "logged outcome contradicts exact replay")
        elif type(entry) is Revealed:
            if entry.value != cur:
                raise SpeculativeFailure(
                    "revealed value contradicts exact replay")
        else:
            raise MalformedLog("init entry after position 0")
    return cur


def compress_log(log: DeferredLog) -> DeltaOp:
    """Compress a counter log into an exact value or a delta.

    Logs that start from a known value, or that contain a revealed entry,
    carry enough information to replay to a single exact value. Everything
    else compresses to the sum of applied updates plus history constraints.
    """
    entries = log.entries
    head = entries[0]
    for entry in entries[1:]:
        if isinstance(entry, _INIT_KINDS):
            raise MalformedLog("init entry after position 0")

    if isinstance(head, InitValue):
        return ValueDelta(_replay_exact(head.value, entries[1:], log.bounds))

    if isinstance(head, InitPrefix):
        raise MalformedLog(
            "prefix-initialized logs compress through the snapshot path")

    last_reveal = None
    for pos in range(len(entries) - 1, 0, -1):
        if type(entries[pos]) is Revealed:
            last_reveal = pos
            break
    if last_reveal is not None:
        # Updates before the reveal are subsumed by the revealed value;
        # the reveal itself is validated at commit time.
        start = entries[last_reveal].value
        return ValueDelta(_replay_exact(start, entries[last_reveal + 1:], log.bounds))

    comp = LogCompressor()
    for entry in entries[1:]:
        comp.add(entry.amount, entry.predicted)
    return comp.delta(log.bounds, log.id)


def apply_delta(delta: CompressedDelta, base: int) -> int:
    """History-validate `delta` against `base`, then return base + sum.

    Raises SpeculativeFailure if any recorded outcome would have differed
    when replayed from `base`.
    """
    if type(delta) is not CompressedDelta:
        raise TypeError("apply_delta takes a compressed delta")
    h = delta.history
    lo, hi = delta.bounds.lower, delta.bounds.upper
    if base + h.max_achieved > hi:
        raise SpeculativeFailure("base pushes an applied update over the top")
    if base + h.min_achieved < lo:
        raise SpeculativeFailure("base pushes an applied update under the bottom")
    if h.min_overflow is not None and base + h.min_overflow <= hi:
        raise SpeculativeFailure("recorded overflow would have fit")
    if h.max_underflow is not None and base + h.max_underflow >= lo:
        raise SpeculativeFailure("recorded underflow would have fit")
    return base + delta.sum


def _unsatisfiable(total: int, bounds: Bounds, source: DeferredId) -> CompressedDelta:
    # Canonical always-failing delta: the achieved interval is wider than
    # the bounds themselves, so no base can pass. Used when merged inputs
    # carry mutually contradictory constraints; applying the pair in
    # sequence would fail for every base too, so behavior is preserved.
    max_a = max(total, 0, bounds.width + 1)
    min_a = min(total, 0)
    history = HistoryConstraints(max_a, min_a, None, None)
    return CompressedDelta(total, history, bounds, source)


def merge_deltas(first: CompressedDelta, second: CompressedDelta) -> CompressedDelta:
    """Compose two compressed deltas applied in sequence into one.

    Applying the result to any base succeeds with the same value, and
    fails, exactly as applying `first` then `second` would.
    """
    if first.bounds != second.bounds:
        raise BoundsMismatch(
            f"{first.bounds} vs {second.bounds}")
    f, s = first.history, second.history
    shift = first.sum
    total = first.sum + second.sum
    max_a = max(f.max_achieved, shift + s.max_achieved)
    min_a = min(f.min_achieved, shift + s.min_achieved)

    overflow = None
    if f.min_overflow is not None:
        overflow = f.min_overflow
    if s.min_overflow is not None:
        shifted = shift + s.min_overflow
        overflow = shifted if overflow is None else min(overflow, shifted)

    underflow = None
    if f.max_underflow is not None:
        underflow = f.max_underflow
    if s.max_underflow is not None:
        shifted = shift + s.max_underflow
        underflow = shifted if underflow is None else max(underflow, shifted)

    if (overflow is not None and overflow <= max_a) or \
            (underflow is not None and underflow >= min_a):
        return _unsatisfiable(total, first.bounds, first.source)

    history = HistoryConstraints(max_a, min_a, overflow, underflow)
    return CompressedDelta(total, history, first.bounds, first.source)


def resolve_snapshot(delta: SnapshotDelta, source_value: int) -> bytes:
    """Render a derived string from its source counter's value."""
    return delta.formatter.render(source_value + delta.prefix_sum)
