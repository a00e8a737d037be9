"""Task scheduling with incarnations, dependencies, and rolling commit.

Workers pull tasks (execute, validate, commit hook) from a shared
scheduler. Transactions move through statuses::

    READY -> EXECUTING -> EXECUTED -> COMMITTED
               |  ^          |
               v  |          v (failed validation)
           SUSPENDED      ABORTING -> READY (next incarnation)

Rolling commit decides when the next transaction in index order can no
longer be re-executed. A global validation wave is incremented by every
suffix validation; per transaction we track

    required_wave   raised to the current wave when a validation of this
                    transaction is scheduled,
    triggered_wave  raised to the new wave when a suffix validation starts
                    at this index,
    validated_wave  the highest wave at which a validation of the current
                    incarnation succeeded.

A commit additionally folds the head transaction's triggered wave into the
global commit wave, so commit_wave always equals the maximum wave
triggered at or below the commit frontier. The head transaction commits
once it is executed and validated_wave >= max(commit_wave, required_wave).

All five counters are monotone. An abort always bumps the validation wave
above any earlier success, and a re-executed transaction has its required
wave raised to the current wave when its validation is scheduled, so a
stale validated_wave can never satisfy the commit check for a newer
incarnation.

Every state change happens under one lock; nothing blocks while holding
it. Suspended transactions park in a resumption list instead of occupying
a worker.
"""

from __future__ import annotations

import threading
from typing import Optional

READY = 0
EXECUTING = 1
SUSPENDED = 2
EXECUTED = 3
ABORTING = 4
COMMITTED = 5

_STATUS_NAMES = ("ready", "executing", "suspended", "executed", "aborting",
                 "committed")

# task kinds returned by next_task
EXECUTE = "execute"
VALIDATE = "validate"
COMMIT = "commit"
DONE = "done"


class Scheduler:
    def __init__(self, num_txns: int, record_events: bool = False):
        self.n = num_txns
        self._lock = threading.Lock()
        self.status = [READY] * num_txns
        self.incarnation = [0] * num_txns
        self._exec_cursor = 0
        self._val_cursor = 0
        self.validation_wave = 0
        self.commit_wave = 0
        self.commit_idx = 0
        self.required_wave = [0] * num_txns
        self.triggered_wave = [0] * num_txns
        self.validated_wave = [-1] * num_txns
        self._deps = {}                  # blocking index -> [suspended indices]
        self._hook_active = False
        self.aborts = 0
        self.events = [] if record_events else None

    # -- event log ---------------------------------------------------------

    def _event(self, name, txn, incarnation, wave, worker):
        if self.events is not None:
            self.events.append((name, txn, incarnation, wave, worker))

    def dump_events(self, path) -> None:
        """Write the debug event log as `event,txn,incarnation,wave,worker`."""
        if self.events is None:
            raise ValueError("scheduler was created without event recording")
        with open(path, "w") as fh:
            for record in self.events:
                fh.write(",".join(str(x) for x in record) + "\n")

    # -- scheduling --------------------------------------------------------

    def schedule_execution(self, i: int) -> None:
        """Request a (re-)execution of txn i with a bumped incarnation."""
        with self._lock:
            if self.status[i] == COMMITTED:
                raise ValueError(f"txn {i} is already committed")
            if self.status[i] == EXECUTED:
                self.incarnation[i] += 1
                self.status[i] = READY
            if self.status[i] == READY and i < self._exec_cursor:
                self._exec_cursor = i

    def schedule_validation(self, i: int) -> None:
        with self._lock:
            self._schedule_validation_locked(i)

    def _schedule_validation_locked(self, i: int) -> None:
        if self.validation_wave > self.required_wave[i]:
            self.required_wave[i] = self.validation_wave
        if i < self._val_cursor:
            self._val_cursor = i

    def schedule_suffix_validation(self, i: int) -> None:
        with self._lock:
            self._schedule_suffix_locked(i)

    def _schedule_suffix_locked(self, i: int) -> None:
        if i >= self.n:
            return
        self.validation_wave += 1
        wave = self.validation_wave
        if wave > self.triggered_wave[i]:
            self.triggered_wave[i] = wave
        if i < self._val_cursor:
            self._val_cursor = i
        self._event("suffix", i, -1, wave, -1)

    # -- execution lifecycle -------------------------------------------------

    def finish_execution(self, i: int, incarnation: int,
                         wrote_new_location: bool, worker: int = -1) -> None:
        with self._lock:
            if self.status[i] != EXECUTING or self.incarnation[i] != incarnation:
                return
            self.status[i] = EXECUTED
            self._event("finish_execution", i, incarnation,
                        self.validation_wave, worker)
            for dep in self._deps.pop(i, ()):
                if self.status[dep] == SUSPENDED:
                    self.status[dep] = READY
                    if dep < self._exec_cursor:
                        self._exec_cursor = dep
            if wrote_new_location:
                self._schedule_suffix_locked(i + 1)
            self._schedule_validation_locked(i)

    def add_dependency(self, i: int, blocking: int) -> bool:
        """Suspend txn i on `blocking`; False means retry the read instead."""
        with self._lock:
            if self.status[blocking] in (EXECUTED, COMMITTED):
                return False
            self._deps.setdefault(blocking, []).append(i)
            self.status[i] = SUSPENDED
            self._event("suspend", i, self.incarnation[i], blocking, -1)
            return True

    # -- validation lifecycle ------------------------------------------------

    def finish_validation(self, i: int, incarnation: int, wave: int,
                          success: bool, worker: int = -1) -> bool:
        """Record a validation result; returns True when the caller must
        run the abort protocol (mark estimates, then finish_abort)."""
        with self._lock:
            if self.status[i] != EXECUTED or self.incarnation[i] != incarnation:
                return False              # stale validation, ignore
            if success:
                if wave > self.validated_wave[i]:
                    self.validated_wave[i] = wave
                self._event("validated", i, incarnation, wave, worker)
                return False
            self.status[i] = ABORTING
            self._event("abort", i, incarnation, wave, worker)
            return True

    def finish_abort(self, i: int, incarnation: int, worker: int = -1) -> None:
        """Complete an abort after the caller marked estimates."""
        with self._lock:
            assert self.status[i] == ABORTING and self.incarnation[i] == incarnation
            self.incarnation[i] = incarnation + 1
            self.status[i] = READY
            self.aborts += 1
            if i < self._exec_cursor:
                self._exec_cursor = i
            self._schedule_suffix_locked(i + 1)

    def abort_for_speculation(self, i: int, incarnation: int) -> bool:
        """Move an executing txn straight to ABORTING (speculative failure).

        Returns True when the caller owns the abort and must mark estimates
        then call finish_abort.
        """
        with self._lock:
            if self.status[i] != EXECUTING or self.incarnation[i] != incarnation:
                return False
            self.status[i] = ABORTING
            self._event("spec_fail", i, incarnation, self.validation_wave, -1)
            return True

    # -- commit ----------------------------------------------------------------

    def try_commit(self) -> Optional[int]:
        with self._lock:
            return self._try_commit_locked()

    def _try_commit_locked(self) -> Optional[int]:
        if self._hook_active:
            return None
        i = self.commit_idx
        if i >= self.n or self.status[i] != EXECUTED:
            return None
        if self.triggered_wave[i] > self.commit_wave:
            self.commit_wave = self.triggered_wave[i]
        if self.validated_wave[i] >= max(self.commit_wave, self.required_wave[i]):
            self._hook_active = True
            return i
        return None

    def reincarnate_for_commit(self, i: int) -> int:
        """Bump the incarnation for a commit-time re-execution."""
        with self._lock:
            assert self._hook_active and self.commit_idx == i
            self.incarnation[i] += 1
            return self.incarnation[i]

    def finish_commit(self, i: int, worker: int = -1) -> None:
        with self._lock:
            assert self._hook_active and self.commit_idx == i
            self.status[i] = COMMITTED
            self.commit_idx = i + 1
            self._hook_active = False
            self._event("commit", i, self.incarnation[i],
                        self.commit_wave, worker)

    def done(self) -> bool:
        return self.commit_idx >= self.n

    # -- dispatch ----------------------------------------------------------------

    def next_task(self, worker: int = 0):
        """Lowest-index available work, validations preferred below the
        execution frontier; ("done",) once everything is committed; None
        when there is momentarily nothing to hand out."""
        with self._lock:
            i = self._try_commit_locked()
            if i is not None:
                self._event("commit_hook", i, self.incarnation[i],
                            self.commit_wave, worker)
                return (COMMIT, i)
            if self.commit_idx >= self.n:
                return (DONE,)
            if self._val_cursor < self._exec_cursor or self._exec_cursor >= self.n:
                task = self._next_validation_locked(worker) \
                    or self._next_execution_locked(worker)
            else:
                task = self._next_execution_locked(worker) \
                    or self._next_validation_locked(worker)
            return task

    def _next_execution_locked(self, worker):
        while self._exec_cursor < self.n:
            i = self._exec_cursor
            if self.status[i] == READY:
                self.status[i] = EXECUTING
                self._exec_cursor += 1
                k = self.incarnation[i]
                self._event("dispatch_execute", i, k, self.validation_wave, worker)
                return (EXECUTE, i, k)
            self._exec_cursor += 1
        return None

    def _next_validation_locked(self, worker):
        while self._val_cursor < self.n:
            i = self._val_cursor
            if i < self.commit_idx:
                self._val_cursor += 1
                continue
            if self.status[i] == EXECUTED and \
                    self.validated_wave[i] < self.validation_wave:
                # A success at the current wave satisfies every commit
                # check until a new wave starts, so anything validated at
                # validation_wave needs no further dispatch.
                self._val_cursor += 1
                wave = self.validation_wave
                k = self.incarnation[i]
                self._event("dispatch_validate", i, k, wave, worker)
                return (VALIDATE, i, k, wave)
            self._val_cursor += 1
        return None
