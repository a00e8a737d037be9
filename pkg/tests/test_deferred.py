import random

import pytest
from hypothesis import given, settings, strategies as st

from deferred_stm.deferred import (
    Bounds,
    CompressedDelta,
    DEFAULT_BOUNDS,
    DeferredId,
    DeferredLog,
    FormatterSpec,
    HistoryConstraints,
    INIT_NONE,
    InitValue,
    Revealed,
    SnapshotDelta,
    Update,
    ValueDelta,
    apply_delta,
    compress_log,
    merge_deltas,
    resolve_snapshot,
)
from deferred_stm.errors import (
    BoundsMismatch,
    LengthExceeded,
    MalformedLog,
    SpeculativeFailure,
)

from conftest import fuzz_log, replay_log_from, sweep_bases

DID = DeferredId(0, 0)


def make_log(entries, bounds=Bounds(0, 100)):
    return DeferredLog(DID, bounds, tuple(entries))


# --- compression -------------------------------------------------------------

def test_compress_mixed_outcomes_matches_expected_constraints():
    # +3 ok, +5 ok, then +72 and +90 both overflow, then +2 ok:
    # applied sum 10, highest applied offset 10, cheapest overflow at 80.
    log = make_log([INIT_NONE, Update(3, True), Update(5, True),
                    Update(72, False), Update(90, False), Update(2, True)])
    delta = compress_log(log)
    assert isinstance(delta, CompressedDelta)
    assert delta.sum == 10
    assert delta.history == HistoryConstraints(
        max_achieved=10, min_achieved=0, min_overflow=80, max_underflow=None)
    # verified against the independent replay for every plausible base
    for base in sweep_bases(log.bounds):
        ok, value = replay_log_from(log.entries[1:], log.bounds, base)
        if ok:
            assert apply_delta(delta, base) == value
        else:
            with pytest.raises(SpeculativeFailure):
                apply_delta(delta, base)


def test_compress_init_value_is_exact():
    assert compress_log(make_log([InitValue(7)])) == ValueDelta(7)


def test_compress_zero_update():
    delta = compress_log(make_log([INIT_NONE, Update(0, True)]))
    assert delta.sum == 0
    assert delta.history == HistoryConstraints()
    assert delta.history.min_overflow is None
    assert delta.history.max_underflow is None


def test_compress_requires_init_entry():
    with pytest.raises(MalformedLog):
        DeferredLog(DID, Bounds(0, 10), (Update(1, True),))
    with pytest.raises(MalformedLog):
        compress_log(make_log([INIT_NONE, InitValue(2)]))


def test_compress_replays_exactly_after_reveal():
    log = make_log([INIT_NONE, Update(4, True), Revealed(54),
                    Update(50, False), Update(10, True)])
    assert compress_log(log) == ValueDelta(64)


def test_compress_init_value_checks_flags():
    # exact replay from 95 overflows at +10, but the flag says it applied
    log = make_log([InitValue(95), Update(10, True)])
    with pytest.raises(SpeculativeFailure):
        compress_log(log)


def test_apply_matches_replay_from_fig_style_base():
    log = make_log([INIT_NONE, Update(3, True), Update(5, True),
                    Update(72, False), Update(90, False), Update(2, True)])
    delta = compress_log(log)
    assert apply_delta(delta, 50) == 60
    ok, value = replay_log_from(log.entries[1:], log.bounds, 50)
    assert ok and value == 60
    # base 5 would have let the +72 through, contradicting the record
    with pytest.raises(SpeculativeFailure):
        apply_delta(delta, 5)
    ok, _ = replay_log_from(log.entries[1:], log.bounds, 5)
    assert not ok


def test_apply_identity_delta():
    delta = CompressedDelta(0, HistoryConstraints(), Bounds(0, 100), DID)
    assert apply_delta(delta, 7) == 7


def test_apply_rejects_out_of_bounds_base():
    delta = CompressedDelta(0, HistoryConstraints(), Bounds(0, 100), DID)
    with pytest.raises(SpeculativeFailure):
        apply_delta(delta, 101)


# --- merging -----------------------------------------------------------------

def _delta_from(entries, bounds):
    return compress_log(DeferredLog(DID, bounds, (INIT_NONE, *entries)))


def _observationally_equal(merged, first, second, bounds):
    for base in sweep_bases(bounds):
        try:
            expected = apply_delta(second, apply_delta(first, base))
        except SpeculativeFailure:
            expected = None
        try:
            got = apply_delta(merged, base)
        except SpeculativeFailure:
            got = None
        if got != expected:
            return False
    return True


def test_merge_identity_element():
    bounds = Bounds(0, 100)
    identity = CompressedDelta(0, HistoryConstraints(), bounds, DID)
    delta = _delta_from([Update(20, True), Update(90, False)], bounds)
    assert merge_deltas(identity, delta) == delta
    merged = merge_deltas(delta, identity)
    assert _observationally_equal(merged, delta, identity, bounds)


def test_merge_plus_twenty_minus_ten():
    bounds = Bounds(0, 100)
    first = _delta_from([Update(20, True)], bounds)
    second = _delta_from([Update(-10, True)], bounds)
    merged = merge_deltas(first, second)
    assert merged.sum == 10
    assert merged.history.max_achieved == 20
    assert merged.history.min_achieved == 0
    assert _observationally_equal(merged, first, second, bounds)


def test_merge_bounds_mismatch():
    a = CompressedDelta(0, HistoryConstraints(), Bounds(0, 10), DID)
    b = CompressedDelta(0, HistoryConstraints(), Bounds(0, 11), DID)
    with pytest.raises(BoundsMismatch):
        merge_deltas(a, b)


def test_merge_with_violations_preserves_failure_classes(rnd):
    bounds = Bounds(0, 50)
    for _ in range(300):
        log1, _ = fuzz_log(rnd, max_len=12, max_bounds_width=50)
        log2, _ = fuzz_log(rnd, max_len=12, max_bounds_width=50)
        first = compress_log(DeferredLog(DID, bounds, (INIT_NONE, *log1.entries[1:])))
        second = compress_log(DeferredLog(DID, bounds, (INIT_NONE, *log2.entries[1:])))
        if not isinstance(first, CompressedDelta) or \
                not isinstance(second, CompressedDelta):
            continue
        merged = merge_deltas(first, second)
        assert _observationally_equal(merged, first, second, bounds)


def test_merge_associativity_observational(rnd):
    bounds = Bounds(0, 40)
    for _ in range(150):
        deltas = []
        for _ in range(3):
            log, _ = fuzz_log(rnd, max_len=8, max_bounds_width=40)
            delta = compress_log(
                DeferredLog(DID, bounds, (INIT_NONE, *log.entries[1:])))
            deltas.append(delta)
        a, b, c = deltas
        left = merge_deltas(merge_deltas(a, b), c)
        right = merge_deltas(a, merge_deltas(b, c))
        for base in sweep_bases(bounds):
            try:
                expected = apply_delta(c, apply_delta(b, apply_delta(a, base)))
            except SpeculativeFailure:
                expected = None
            for merged in (left, right):
                try:
                    got = apply_delta(merged, base)
                except SpeculativeFailure:
                    got = None
                assert got == expected


# --- property tests ----------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=120), st.data())
def test_compression_soundness_property(width, data):
    rnd = random.Random(data.draw(st.integers(min_value=0, max_value=2**32)))
    log, _ = fuzz_log(rnd, max_len=40, max_bounds_width=width)
    delta = compress_log(log)
    assert isinstance(delta, CompressedDelta)
    h = delta.history
    assert h.min_achieved <= 0 <= h.max_achieved
    assert h.min_achieved <= delta.sum <= h.max_achieved
    if h.min_overflow is not None:
        assert h.min_overflow > h.max_achieved
    if h.max_underflow is not None:
        assert h.max_underflow < h.min_achieved
    for base in sweep_bases(log.bounds):
        ok, value = replay_log_from(log.entries[1:], log.bounds, base)
        if ok:
            assert apply_delta(delta, base) == value
        else:
            with pytest.raises(SpeculativeFailure):
                apply_delta(delta, base)


@settings(max_examples=150, deadline=None)
@given(st.integers(min_value=0, max_value=400), st.lists(
    st.tuples(st.integers(min_value=-40, max_value=40)), max_size=30))
def test_init_value_logs_replay_exactly(start, raw_updates):
    bounds = Bounds(0, 400)
    start = min(start, bounds.upper)
    cur = start
    entries = []
    for (amount,) in raw_updates:
        fits = bounds.contains(cur + amount)
        if fits:
            cur += amount
        entries.append(Update(amount, fits))
    delta = compress_log(DeferredLog(DID, bounds, (InitValue(start), *entries)))
    assert delta == ValueDelta(cur)


def test_history_invariants_hold_after_merge(rnd):
    bounds = Bounds(5, 95)
    for _ in range(400):
        log1, _ = fuzz_log(rnd, max_len=10, max_bounds_width=90)
        log2, _ = fuzz_log(rnd, max_len=10, max_bounds_width=90)
        first = compress_log(DeferredLog(DID, bounds, (INIT_NONE, *log1.entries[1:])))
        second = compress_log(DeferredLog(DID, bounds, (INIT_NONE, *log2.entries[1:])))
        merged = merge_deltas(first, second)
        h = merged.history
        assert h.min_achieved <= 0 <= h.max_achieved
        if h.min_overflow is not None:
            assert h.min_overflow > h.max_achieved
        if h.max_underflow is not None:
            assert h.max_underflow < h.min_achieved


# --- snapshots ---------------------------------------------------------------

def test_resolve_snapshot_formats_value():
    snap = SnapshotDelta(DID, 0, FormatterSpec(b"arXiv #", b""))
    assert resolve_snapshot(snap, 2024) == b"arXiv #2024"


def test_resolve_snapshot_applies_prefix_sum():
    snap = SnapshotDelta(DID, 1, FormatterSpec(b"", b""))
    assert resolve_snapshot(snap, 0) == b"1"


def test_resolve_snapshot_length_cap():
    snap = SnapshotDelta(DID, 0, FormatterSpec(b"p" * 250, b""))
    assert len(resolve_snapshot(snap, 999999)) == 256
    with pytest.raises(LengthExceeded):
        resolve_snapshot(snap, 1000000)   # 250 + 7 digits > 256


def test_full_width_defaults():
    assert DEFAULT_BOUNDS.lower == 0
    assert DEFAULT_BOUNDS.upper == (1 << 64) - 1
    with pytest.raises(ValueError):
        Bounds(3, 2)
