"""Immutable pre-block state and post-block write-set application.

State is an in-memory association from opaque byte keys to opaque byte
values, plus a separate table of base values for deferred objects so that
delta traversals can read a storage base without deserializing anything.
There is no persistence layer.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .errors import PlaceholderRemains
from .rng import mix

StateKey = bytes

ACCOUNT_KEY_PREFIX = b"\x01"

_BASE_BALANCE = 1 << 40


@dataclass(frozen=True)
class StateValue:
    """Serialized value bytes plus the placeholder slots still embedded.

    `slots` holds (offset, deferred_id, width) triples describing spans of
    `data` that still contain the deferred-field placeholder encoding.
    A fully materialized value has no slots.
    """

    data: bytes
    slots: tuple = ()

    def __len__(self) -> int:
        return len(self.data)


def account_key(index: int) -> StateKey:
    return ACCOUNT_KEY_PREFIX + index.to_bytes(8, "big")


def encode_balance(value: int) -> bytes:
    return value.to_bytes(8, "big")


def decode_balance(raw: bytes) -> int:
    return int.from_bytes(raw, "big")


class BaseState:
    """Read-only key-value state a block executes on top of.

    Instances must not be mutated while a block is in flight; they may be
    read concurrently from any number of workers.
    """

    __slots__ = ("_entries", "_deferred")

    def __init__(self, entries: Optional[Mapping[StateKey, bytes]] = None,
                 deferred_bases: Optional[Mapping] = None):
        self._entries = dict(entries) if entries else {}
        self._deferred = dict(deferred_bases) if deferred_bases else {}

    def get(self, key: StateKey) -> Optional[bytes]:
        return self._entries.get(key)

    def get_deferred_base(self, deferred_id) -> Optional[int]:
        return self._deferred.get(deferred_id)

    def __contains__(self, key: StateKey) -> bool:
        return key in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> Iterable:
        return self._entries.items()

    def deferred_bases(self) -> Iterable:
        return self._deferred.items()

    def balance(self, key: StateKey) -> int:
        raw = self._entries.get(key)
        return decode_balance(raw) if raw is not None else 0


def seed_accounts(seed: int, num_accounts: int) -> BaseState:
    """Deterministic account seeding.

    Account balance keys are the 8-byte big-endian account index prefixed
    by 0x01; balances are 8-byte big-endian unsigned integers, large enough
    to cover any generated workload, with seed-dependent low bits.
    """
    entries = {}
    for idx in range(num_accounts):
        balance = _BASE_BALANCE + (mix(seed, 0xACC0, idx) & 0xFFFF)
        entries[account_key(idx)] = encode_balance(balance)
    return BaseState(entries)


def _unwrap(value) -> bytes:
    if isinstance(value, StateValue):
        if value.slots:
            raise PlaceholderRemains(
                f"value still carries {len(value.slots)} placeholder slot(s)")
        return value.data
    return value


def apply_outputs(state: BaseState, write_sets, deferred_updates=None) -> BaseState:
    """Fold finalized write-sets onto `state`, left to right, last write wins.

    `write_sets` is an ordered iterable of per-transaction write-sets, each
    an iterable of (key, value) pairs. Values must be fully materialized;
    anything still carrying placeholder slots is rejected.
    """
    entries = dict(state._entries)
    for write_set in write_sets:
        for key, value in write_set:
            entries[key] = _unwrap(value)
    deferred = dict(state._deferred)
    if deferred_updates:
        deferred.update(deferred_updates)
    return BaseState(entries, deferred)


def state_hash(state: BaseState) -> str:
    """Deterministic digest over entries and deferred bases, byte-ordered."""
    h = hashlib.sha256()
    for key in sorted(state._entries):
        h.update(key)
        h.update(b"\x00")
        h.update(state._entries[key])
        h.update(b"\x01")
    for did in sorted(state._deferred, key=lambda d: d.sort_key()):
        h.update(did.encode())
        value = state._deferred[did]
        if isinstance(value, bytes):
            h.update(b"B" + value)
        else:
            h.update(b"I" + value.to_bytes(16, "big", signed=True))
    return h.hexdigest()
