"""Parallel block execution with deferred counter objects.

The engine executes a block of deterministic transaction scripts over a
key-value state using optimistic concurrency with multi-version memory.
Contended counters are handled as deferred objects: updates are captured
with predicted outcomes, compressed into deltas, and validated against the
committed value when the transaction commits under the rolling-commit
protocol. Outputs are always byte-identical to a sequential execution.
"""

from .deferred import (
    Bounds,
    CompressedDelta,
    DEFAULT_BOUNDS,
    DeferredId,
    DeferredLog,
    DerivedValueDelta,
    FormatterSpec,
    HistoryConstraints,
    SnapshotDelta,
    ValueDelta,
    apply_delta,
    compress_log,
    merge_deltas,
    pre_block_id,
    resolve_snapshot,
)
from .errors import (
    BoundsMismatch,
    Dependency,
    EngineError,
    LengthExceeded,
    MalformedLog,
    MissingLog,
    SpeculativeFailure,
    UnresolvedId,
    WidthMismatch,
)
from .executor import BlockOutput, FinalTxnOutput, Stats, execute_block
from .oracle import LogStore, replay_combine, replay_reveal, sequential_execute_block
from .state import BaseState, StateValue, apply_outputs, seed_accounts, state_hash
from .txn import (
    CapturedReads,
    TxnOutput,
    TxnScript,
    execute_transaction,
    patch_placeholders,
    predict_update,
)
from .workloads import WorkloadSpec, generate, seed_state

__all__ = [
    "BaseState", "BlockOutput", "Bounds", "BoundsMismatch", "CapturedReads",
    "CompressedDelta", "DEFAULT_BOUNDS", "DeferredId", "DeferredLog",
    "Dependency", "DerivedValueDelta", "EngineError", "FinalTxnOutput",
    "FormatterSpec", "HistoryConstraints", "LengthExceeded", "LogStore",
    "MalformedLog", "MissingLog", "SnapshotDelta", "SpeculativeFailure",
    "StateValue", "Stats", "TxnOutput", "TxnScript", "UnresolvedId",
    "ValueDelta", "WidthMismatch", "WorkloadSpec", "apply_delta",
    "apply_outputs", "compress_log", "execute_block", "execute_transaction",
    "generate", "merge_deltas", "patch_placeholders", "pre_block_id",
    "predict_update", "replay_combine", "replay_reveal", "resolve_snapshot",
    "seed_accounts", "seed_state", "sequential_execute_block", "state_hash",
]
