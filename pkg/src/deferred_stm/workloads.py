"""Deterministic generators for the benchmark workloads.

Every workload charges a flat fee: the sender's plain balance pays it and
the same amount is burned from a global supply counter, so even a no-op
touches the supply. The `mode` switch decides whether the contended
object (supply, payer balance, receiver balance) is a plain key that every
transaction read-modify-writes, or a deferred counter.

Generation is a pure function of (spec, block_size): all choices come from
the splitmix64 stream in `rng`, so any two runs, or any two ports, produce
identical blocks.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

from . import rng
from .deferred import Bounds, DEFAULT_BOUNDS, FormatterSpec, pre_block_id
from .state import BaseState, StateKey, account_key, encode_balance, seed_accounts
from .txn import (
    AbortIf,
    ChargeFee,
    Credit,
    Debit,
    DeferredReveal,
    DeferredSnapshot,
    DeferredUpdate,
    RepeatUpdate,
    SOLD_OUT,
    TxnScript,
    WriteValue,
)

FEE = 100
TRANSFER_MAX = 1000

DEFAULT_ACCOUNTS = 20_000
DEFAULT_BLOCK_SIZE = 1000

SUPPLY_KEY: StateKey = b"\x00SUPPLY"
SUPPLY_BASE = 1 << 50

# Well-known pre-block deferred objects, by sequence number.
SUPPLY_ID = pre_block_id(0)
CNT_ID = pre_block_id(1)
NFT_SUPPLY_ID = pre_block_id(2)
HISTORY_ID = pre_block_id(3)
REVEAL_ID = pre_block_id(4)
_PAYER_SEQ = 100
_RECEIVER_SEQ = 1 << 20

KINDS = ("noop", "sponsored", "transfer", "nft-mint", "history", "cnt", "reveal")
MODES = ("integer", "deferred")


def payer_id(k: int):
    return pre_block_id(_PAYER_SEQ + k)


def payer_key(k: int) -> StateKey:
    return b"\x04" + k.to_bytes(8, "big")


def receiver_id(account: int):
    return pre_block_id(_RECEIVER_SEQ + account)


def token_key(position: int) -> StateKey:
    return b"\x02" + position.to_bytes(8, "big")


def reveal_store_key(position: int) -> StateKey:
    return b"\x03" + position.to_bytes(8, "big")


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str
    mode: str = "deferred"
    payers: int = 1
    n: int = 1                      # history loop length / cnt bound
    reveal_fraction: float = 0.5
    limit: Optional[int] = None     # nft collection cap
    pattern: str = ""               # transfer: random | single_receiver
    accounts: int = DEFAULT_ACCOUNTS
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload {self.kind!r}")
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not 0.0 <= self.reveal_fraction <= 1.0:
            raise ValueError("reveal_fraction must be within [0, 1]")
        if self.payers < 1 or self.n < 1 or self.accounts < 1:
            raise ValueError("payers, n and accounts must be positive")
        if self.kind == "transfer" and not self.pattern:
            object.__setattr__(
                self, "pattern",
                "random" if self.mode == "integer" else "single_receiver")
        if self.pattern not in ("", "random", "single_receiver"):
            raise ValueError(f"unknown transfer pattern {self.pattern!r}")

    def to_text(self) -> str:
        parts = [f"kind={self.kind}", f"mode={self.mode}", f"seed={self.seed}",
                 f"accounts={self.accounts}"]
        if self.kind == "sponsored":
            parts.append(f"payers={self.payers}")
        if self.kind in ("history", "cnt"):
            parts.append(f"n={self.n}")
        if self.kind == "reveal":
            parts.append(f"reveal_fraction={self.reveal_fraction}")
        if self.kind == "nft-mint" and self.limit is not None:
            parts.append(f"limit={self.limit}")
        if self.kind == "transfer":
            parts.append(f"pattern={self.pattern}")
        return " ".join(parts)

    @classmethod
    def from_text(cls, text: str) -> "WorkloadSpec":
        fields = dict(item.split("=", 1) for item in text.split())
        kwargs = {"kind": fields.pop("kind")}
        for name, value in fields.items():
            if name in ("mode", "pattern"):
                kwargs[name] = value
            elif name == "reveal_fraction":
                kwargs[name] = float(value)
            else:
                kwargs[name] = int(value)
        return cls(**kwargs)


def seed_state(spec: WorkloadSpec) -> BaseState:
    """Accounts plus the workload's pre-block objects."""
    state = seed_accounts(spec.seed, spec.accounts)
    entries = dict(state.entries())
    deferred = {}
    if spec.kind == "noop" and spec.mode == "integer":
        entries[SUPPLY_KEY] = encode_balance(SUPPLY_BASE)
    else:
        deferred[SUPPLY_ID] = SUPPLY_BASE
    if spec.kind == "sponsored":
        for k in range(spec.payers):
            if spec.mode == "integer":
                entries[payer_key(k)] = encode_balance(SUPPLY_BASE)
            else:
                deferred[payer_id(k)] = SUPPLY_BASE
    elif spec.kind == "transfer" and spec.mode == "deferred":
        for account in range(spec.accounts):
            deferred[receiver_id(account)] = 0
    elif spec.kind == "nft-mint":
        deferred[NFT_SUPPLY_ID] = 0
    elif spec.kind == "history":
        deferred[HISTORY_ID] = 0
    elif spec.kind == "cnt":
        deferred[CNT_ID] = 0
    elif spec.kind == "reveal":
        deferred[REVEAL_ID] = 0
    return BaseState(entries, deferred)


def _sender(spec: WorkloadSpec, position: int) -> StateKey:
    return account_key(rng.uniform_below(spec.seed, spec.accounts, 1, position))


def _receiver_account(spec: WorkloadSpec, position: int, accounts: int) -> int:
    if spec.pattern == "single_receiver":
        return 0
    return rng.uniform_below(spec.seed, accounts, 2, position)


def _fee(spec: WorkloadSpec, sender: StateKey):
    burn = SUPPLY_KEY if (spec.kind == "noop" and spec.mode == "integer") \
        else SUPPLY_ID
    return ChargeFee(sender, FEE, burn)


def generate(spec: WorkloadSpec, block_size: int) -> list:
    """Deterministic block of scripts for the workload."""
    build = _BUILDERS[spec.kind]
    return [build(spec, pos) for pos in range(block_size)]


def _noop(spec: WorkloadSpec, pos: int) -> TxnScript:
    sender = _sender(spec, pos)
    return TxnScript((_fee(spec, sender),), label="noop")


def _sponsored(spec: WorkloadSpec, pos: int) -> TxnScript:
    payer = rng.uniform_below(spec.seed, spec.payers, 3, pos)
    target = payer_key(payer) if spec.mode == "integer" else payer_id(payer)
    return TxnScript((ChargeFee(target, FEE, SUPPLY_ID),), label="sponsored")


def _transfer(spec: WorkloadSpec, pos: int) -> TxnScript:
    sender = _sender(spec, pos)
    amount = 1 + rng.uniform_below(spec.seed, TRANSFER_MAX, 4, pos)
    receiver = _receiver_account(spec, pos, spec.accounts)
    ops = [_fee(spec, sender), Debit(sender, amount)]
    if spec.mode == "integer":
        ops.append(Credit(account_key(receiver), amount))
    else:
        ops.append(DeferredUpdate(receiver_id(receiver), amount, DEFAULT_BOUNDS))
    return TxnScript(tuple(ops), label="transfer")


_NFT_HANDLE = 0


def _nft_mint(spec: WorkloadSpec, pos: int) -> TxnScript:
    sender = _sender(spec, pos)
    bounds = Bounds(0, spec.limit) if spec.limit is not None else DEFAULT_BOUNDS
    ops = (
        _fee(spec, sender),
        DeferredUpdate(NFT_SUPPLY_ID, 1, bounds),
        AbortIf(SOLD_OUT),
        DeferredSnapshot(_NFT_HANDLE, NFT_SUPPLY_ID, FormatterSpec(b"Tok #", b"")),
        WriteValue(token_key(pos), (b"TKN|", _NFT_HANDLE, b"|", sender)),
    )
    return TxnScript(ops, label="nft-mint")


def _history(spec: WorkloadSpec, pos: int) -> TxnScript:
    sender = _sender(spec, pos)
    return TxnScript(
        (_fee(spec, sender), RepeatUpdate(HISTORY_ID, 1, spec.n, DEFAULT_BOUNDS)),
        label="history")


def _cnt(spec: WorkloadSpec, pos: int) -> TxnScript:
    sender = _sender(spec, pos)
    amount = 1 if rng.chance(spec.seed, 0.5, 5, pos) else -1
    return TxnScript(
        (_fee(spec, sender), DeferredUpdate(CNT_ID, amount, Bounds(0, spec.n))),
        label="cnt")


def _reveal(spec: WorkloadSpec, pos: int) -> TxnScript:
    sender = _sender(spec, pos)
    ops = [_fee(spec, sender),
           DeferredUpdate(REVEAL_ID, 1, DEFAULT_BOUNDS)]
    if rng.chance(spec.seed, spec.reveal_fraction, 6, pos):
        ops.append(DeferredReveal(REVEAL_ID, DEFAULT_BOUNDS,
                                  store_key=reveal_store_key(pos)))
    return TxnScript(tuple(ops), label="reveal")


_BUILDERS = {
    "noop": _noop,
    "sponsored": _sponsored,
    "transfer": _transfer,
    "nft-mint": _nft_mint,
    "history": _history,
    "cnt": _cnt,
    "reveal": _reveal,
}
