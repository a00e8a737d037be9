"""Multi-versioned memory for plain writes and deferred deltas.

MVData stores versioned plain writes; MVDelayedFields stores versioned
deferred deltas and resolves reads by delta traversal. Entries for a given
(key, index) or (id, index) slot are written only by the unique executor of
that incarnation; predecessor queries walk a per-key sorted index list.

Thread-safety note: this module relies on CPython's GIL making individual
dict/list operations atomic (bisect.insort, dict get/set). Each slot has a
single writer; readers retry if they observe a slot mid-removal.
"""

from __future__ import annotations

from bisect import bisect_left, insort
from typing import Optional

from .deferred import (
    CompressedDelta,
    DerivedValueDelta,
    SnapshotDelta,
    ValueDelta,
    apply_delta,
    merge_deltas,
    resolve_snapshot,
)
from .errors import BoundsMismatch, Dependency, SpeculativeFailure

# Version of a read: None means the pre-block storage, otherwise the
# (transaction index, incarnation) pair that produced the value.
STORAGE = None

ESTIMATE = object()      # data-entry marker for writes of an aborted incarnation
MISS = object()          # data read found no write below the reader


class _KeyEntry:
    __slots__ = ("indices", "slots")

    def __init__(self):
        self.indices = []
        self.slots = {}


class MVData:
    """Versioned plain writes, one entry per (key, transaction index)."""

    def __init__(self):
        self._keys = {}
        self._written = {}   # index -> set of keys currently recorded

    def data_write(self, key, index: int, incarnation: int, value) -> bool:
        """Record one write; returns True if `key` is new for this index."""
        entry = self._keys.get(key)
        if entry is None:
            entry = self._keys.setdefault(key, _KeyEntry())
        if index not in entry.slots:
            insort(entry.indices, index)
        entry.slots[index] = (incarnation, value)
        written = self._written.setdefault(index, set())
        wrote_new = key not in written
        written.add(key)
        return wrote_new

    def apply_write_set(self, index: int, incarnation: int, writes) -> bool:
        """Replace the index's write-set; returns True on any new location."""
        prev = self._written.get(index, frozenset())
        new_keys = set()
        wrote_new = False
        for key, value in writes:
            new_keys.add(key)
            if key not in prev:
                wrote_new = True
            entry = self._keys.get(key)
            if entry is None:
                entry = self._keys.setdefault(key, _KeyEntry())
            if index not in entry.slots:
                insort(entry.indices, index)
            entry.slots[index] = (incarnation, value)
        for key in prev - new_keys:
            self._remove(key, index)
        self._written[index] = new_keys
        return wrote_new

    def _remove(self, key, index: int) -> None:
        entry = self._keys.get(key)
        if entry is None or index not in entry.slots:
            return
        del entry.slots[index]
        pos = bisect_left(entry.indices, index)
        if pos < len(entry.indices) and entry.indices[pos] == index:
            del entry.indices[pos]

    def mark_estimates(self, index: int) -> None:
        for key in self._written.get(index, ()):
            entry = self._keys.get(key)
            if entry is not None and index in entry.slots:
                entry.slots[index] = ESTIMATE

    def _find_below(self, key, reader: int):
        entry = self._keys.get(key)
        if entry is None:
            return None
        while True:
            indices = entry.indices
            pos = bisect_left(indices, reader) - 1
            while pos >= 0:
                idx = indices[pos]
                slot = entry.slots.get(idx)
                if slot is not None:
                    return idx, slot
                pos -= 1          # raced a removal, look further down
            return None

    def data_read(self, key, reader_index: int):
        """Highest write strictly below the reader, or MISS.

        Returns (value, (index, incarnation)). Raises Dependency when the
        predecessor entry is an estimate.
        """
        found = self._find_below(key, reader_index)
        if found is None:
            return MISS
        idx, slot = found
        if slot is ESTIMATE:
            raise Dependency(idx)
        incarnation, value = slot
        return value, (idx, incarnation)

    def read_version(self, key, reader_index: int):
        """Version the reader would observe now: STORAGE, a pair, or ESTIMATE."""
        found = self._find_below(key, reader_index)
        if found is None:
            return STORAGE
        idx, slot = found
        if slot is ESTIMATE:
            return ESTIMATE
        return (idx, slot[0])


class _Committed:
    __slots__ = ("value",)

    def __init__(self, value):
        self.value = value


class _Estimate:
    __slots__ = ("previous",)

    def __init__(self, previous):
        self.previous = previous


class MVDelayedFields:
    """Versioned deferred deltas keyed by object id, with delta traversal.

    Estimate markings are ignored during traversal (the previous delta is
    used instead) until a re-execution changes an object's entry; from then
    on estimates for that object behave like data estimates and suspend the
    reader. The switch is per object and never reverts within a block.
    """

    def __init__(self, base_state):
        self._state = base_state
        self._ids = {}
        self._recorded = {}       # index -> {id: delta}
        self._strict = {}         # id -> True once estimates must be obeyed

    def strict_estimates(self, deferred_id) -> bool:
        return self._strict.get(deferred_id, False)

    def _slot_write(self, deferred_id, index: int, entry) -> None:
        ids_entry = self._ids.get(deferred_id)
        if ids_entry is None:
            ids_entry = self._ids.setdefault(deferred_id, _KeyEntry())
        if index not in ids_entry.slots:
            insort(ids_entry.indices, index)
        ids_entry.slots[index] = entry

    def _slot_remove(self, deferred_id, index: int) -> None:
        ids_entry = self._ids.get(deferred_id)
        if ids_entry is None or index not in ids_entry.slots:
            return
        del ids_entry.slots[index]
        pos = bisect_left(ids_entry.indices, index)
        if pos < len(ids_entry.indices) and ids_entry.indices[pos] == index:
            del ids_entry.indices[pos]

    def delayed_record(self, index: int, delta_set) -> None:
        """Replace the index's delta entries with a new delta-set.

        When the previous entries were estimates, any changed delta, newly
        appearing id, or disappearing id flips that object to strict
        estimate handling.
        """
        old = self._recorded.get(index)
        new = dict(delta_set)
        if old:
            had_estimates = False
            ids_entry_cache = {}
            for did in old:
                ids_entry = self._ids.get(did)
                slot = ids_entry.slots.get(index) if ids_entry else None
                ids_entry_cache[did] = slot
                if isinstance(slot, _Estimate):
                    had_estimates = True
            for did in old.keys() | new.keys():
                slot = ids_entry_cache.get(did)
                was_estimate = isinstance(slot, _Estimate)
                if did not in new:
                    if was_estimate:
                        self._strict[did] = True
                    self._slot_remove(did, index)
                elif was_estimate and slot.previous != new[did]:
                    self._strict[did] = True
                elif did not in old and had_estimates:
                    self._strict[did] = True
        for did, delta in new.items():
            self._slot_write(did, index, delta)
        self._recorded[index] = new

    def mark_estimates(self, index: int) -> None:
        for did in self._recorded.get(index, ()):
            ids_entry = self._ids.get(did)
            if ids_entry is None:
                continue
            slot = ids_entry.slots.get(index)
            if slot is not None and not isinstance(slot, _Estimate):
                ids_entry.slots[index] = _Estimate(slot)

    def delayed_set_committed(self, deferred_id, index: int, value) -> None:
        """Pin the committed value at (id, index); traversal stops here."""
        self._slot_write(deferred_id, index, _Committed(value))

    def _find_below(self, deferred_id, below: int):
        ids_entry = self._ids.get(deferred_id)
        if ids_entry is None:
            return None
        indices = ids_entry.indices
        pos = bisect_left(indices, below) - 1
        while pos >= 0:
            idx = indices[pos]
            slot = ids_entry.slots.get(idx)
            if slot is None:
                pos -= 1
                continue
            if isinstance(slot, _Estimate):
                if self._strict.get(deferred_id):
                    raise Dependency(idx)
                return idx, slot.previous
            return idx, slot
        return None

    def delayed_read(self, deferred_id, reader_index: int):
        value, _ = self._traverse(deferred_id, reader_index)
        return value

    def delayed_read_traced(self, deferred_id, reader_index: int):
        """Like delayed_read but also returns the number of deltas crossed."""
        return self._traverse(deferred_id, reader_index)

    def _traverse(self, deferred_id, reader_index: int):
        path = []
        cur_id, below = deferred_id, reader_index
        while True:
            found = self._find_below(cur_id, below)
            if found is None:
                base = self._state.get_deferred_base(cur_id)
                if base is None:
                    raise SpeculativeFailure(
                        f"no recorded entry or storage base for {cur_id}")
                break
            idx, slot = found
            kind = type(slot)
            if kind is _Committed:
                base = slot.value
                break
            if kind is ValueDelta:
                base = slot.value
                break
            if kind is DerivedValueDelta:
                base = slot.data
                break
            path.append(slot)
            cur_id, below = slot.source, idx

        crossed = len(path)
        value = base
        pending = None
        for delta in reversed(path):
            if type(delta) is CompressedDelta:
                if pending is None:
                    pending = delta
                else:
                    try:
                        pending = merge_deltas(pending, delta)
                    except BoundsMismatch:
                        value = apply_delta(pending, value)
                        pending = delta
            else:
                if pending is not None:
                    value = apply_delta(pending, value)
                    pending = None
                value = resolve_snapshot(delta, value)
        if pending is not None:
            value = apply_delta(pending, value)
        return value, crossed
