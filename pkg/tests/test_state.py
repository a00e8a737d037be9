import pytest

from deferred_stm.deferred import pre_block_id
from deferred_stm.errors import PlaceholderRemains
from deferred_stm.state import (
    BaseState,
    StateValue,
    account_key,
    apply_outputs,
    decode_balance,
    seed_accounts,
    state_hash,
)


def test_get_on_empty_state():
    assert BaseState().get(b"k") is None


def test_get_after_seeding_single_key():
    state = BaseState({b"k": b"v"})
    assert state.get(b"k") == b"v"


def test_unknown_key_absent_in_large_seeded_state():
    state = seed_accounts(seed=42, num_accounts=200_000)
    assert len(state) == 200_000
    assert state.get(account_key(200_000)) is None
    assert state.get(b"\x02missing") is None
    assert decode_balance(state.get(account_key(199_999))) >= 1 << 40


def test_seeding_is_deterministic_and_seed_sensitive():
    a = seed_accounts(7, 100)
    b = seed_accounts(7, 100)
    c = seed_accounts(8, 100)
    assert state_hash(a) == state_hash(b)
    assert state_hash(a) != state_hash(c)


def test_deferred_base_lookup():
    did = pre_block_id(0)
    state = BaseState(deferred_bases={did: 5, pre_block_id(1): 0})
    assert state.get_deferred_base(did) == 5
    assert state.get_deferred_base(pre_block_id(1)) == 0
    assert state.get_deferred_base(pre_block_id(2)) is None


def test_apply_outputs_empty_is_identity():
    state = BaseState({b"k": b"a"})
    result = apply_outputs(state, [])
    assert result.get(b"k") == b"a"
    assert state_hash(result) == state_hash(state)


def test_apply_outputs_last_write_wins():
    state = BaseState()
    result = apply_outputs(state, [[(b"k", b"a")], [(b"k", b"b")]])
    assert result.get(b"k") == b"b"


def test_apply_outputs_order_sensitivity():
    state = BaseState()
    ab = apply_outputs(state, [[(b"k", b"a")], [(b"k", b"b")]])
    ba = apply_outputs(state, [[(b"k", b"b")], [(b"k", b"a")]])
    assert state_hash(ab) != state_hash(ba)
    same = apply_outputs(state, [[(b"k", b"a")], [(b"k", b"a")]])
    flipped = apply_outputs(state, [[(b"k", b"a")], [(b"k", b"a")]])
    assert state_hash(same) == state_hash(flipped)


def test_apply_outputs_rejects_placeholders():
    state = BaseState()
    tainted = StateValue(b"\xd7" + bytes(21), ((0, pre_block_id(0), 8),))
    with pytest.raises(PlaceholderRemains):
        apply_outputs(state, [[(b"k", tainted)]])
    clean = StateValue(b"ok")
    result = apply_outputs(state, [[(b"k", clean)]])
    assert result.get(b"k") == b"ok"


def test_reads_do_not_mutate_state():
    state = seed_accounts(1, 500)
    before = state_hash(state)
    for i in range(500):
        state.get(account_key(i))
        state.get(b"nope%d" % i)
        state.get_deferred_base(pre_block_id(i))
    assert state_hash(state) == before


def test_apply_outputs_updates_deferred_bases():
    did = pre_block_id(3)
    state = BaseState(deferred_bases={did: 10})
    result = apply_outputs(state, [], deferred_updates={did: 25})
    assert result.get_deferred_base(did) == 25
    assert state.get_deferred_base(did) == 10
