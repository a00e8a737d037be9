"""Shared test helpers: independent replay oracles and log fuzzers."""

import random

import pytest

from deferred_stm.deferred import (
    Bounds,
    DeferredId,
    DeferredLog,
    INIT_NONE,
    Update,
)
from deferred_stm.state import apply_outputs, state_hash


def replay_log_from(entries, bounds, base):
    """Independent brute-force replay of update entries from a base.

    Walks the log entry by entry with plain arithmetic. A predicted-true
    update must fit within bounds and applies; a predicted-false update
    must fail against the same bound it failed against when logged. That
    direction is intrinsic to the log: relative to any in-bounds predicted
    base, a failure at positive cumulative offset overflowed and one at
    negative offset underflowed, so a replay base that flips the direction
    is inconsistent with the recorded execution. Returns (ok, value).
    """
    lo, hi = bounds.lower, bounds.upper
    cur = base
    for entry in entries:
        attempted = cur + entry.amount
        if entry.predicted:
            if not lo <= attempted <= hi:
                return False, None
            cur = attempted
        else:
            offset = attempted - base
            if offset > 0:
                if attempted <= hi:
                    return False, None
            elif offset < 0:
                if attempted >= lo:
                    return False, None
            else:
                return False, None
    return True, cur


def fuzz_log(rnd: random.Random, max_len=60, max_bounds_width=200,
             big_lower=False):
    """Random counter log the way an execution would produce one.

    Predictions are computed exactly against a hidden base drawn from the
    bounds, matching the engine where every prediction comes from some
    committed (hence in-bounds) value.
    """
    width = rnd.randint(0, max_bounds_width)
    if big_lower:
        lower = (1 << 64) - 1 - width - rnd.randint(0, 5)
    else:
        lower = rnd.randint(0, 1000)
    bounds = Bounds(lower, lower + width)
    hidden_base = rnd.randint(bounds.lower, bounds.upper)
    length = rnd.randint(0, max_len)
    entries = []
    applied = 0
    span = max(width, 1)
    for _ in range(length):
        amount = rnd.randint(-span - 2, span + 2)
        if amount == 0:
            amount = 1
        attempted = hidden_base + applied + amount
        predicted = bounds.contains(attempted)
        if predicted:
            applied += amount
        entries.append(Update(amount, predicted))
    log = DeferredLog(DeferredId(0, 0), bounds, (INIT_NONE, *entries))
    return log, hidden_base


def sweep_bases(bounds):
    return range(bounds.lower - 2, bounds.upper + 3)


def assert_blocks_equal(engine_out, oracle_out, base_state):
    assert len(engine_out.outputs) == len(oracle_out.outputs)
    for i, (got, want) in enumerate(zip(engine_out.outputs, oracle_out.outputs)):
        assert got == want, f"txn {i}: {got} != {want}"
    assert engine_out.committed_deferred == oracle_out.committed_deferred
    got_state = apply_outputs(base_state,
                              (o.write_set for o in engine_out.outputs),
                              engine_out.committed_deferred)
    want_state = apply_outputs(base_state,
                               (o.write_set for o in oracle_out.outputs),
                               oracle_out.committed_deferred)
    assert state_hash(got_state) == state_hash(want_state)


@pytest.fixture
def rnd():
    return random.Random(0xC0FFEE)
