"""Shared exception types for the execution engine."""


class EngineError(Exception):
    """Base class for errors raised by the engine."""


class MalformedLog(EngineError):
    """A deferred log violates its structural rules."""


class BoundsMismatch(EngineError):
    """Deltas with different counter bounds cannot be merged."""


class LengthExceeded(EngineError):
    """A rendered derived string exceeds the 256 byte cap."""


class UnresolvedId(EngineError):
    """A placeholder references an id the resolver does not know."""


class WidthMismatch(EngineError):
    """A resolved value does not fit the placeholder slot it targets."""


class MissingLog(EngineError):
    """Replay found neither an ancestor log nor a storage base."""


class PlaceholderRemains(EngineError):
    """A value that should be fully materialized still carries placeholders."""


class ScriptError(EngineError):
    """A transaction script violates a static usage rule."""


class UnknownDeferredId(EngineError):
    """An exact-mode read targeted a deferred object that does not exist."""


class SpeculativeFailure(EngineError):
    """Execution state inconsistent with every possible sequential run.

    Raised when history validation fails while applying a delta, or when
    log compression discovers contradictory constraints. Can only happen
    under concurrent speculation and is handled like an abort.
    """


class Dependency(EngineError):
    """A read hit an estimate; the reader should suspend on `blocking`."""

    def __init__(self, blocking: int):
        super().__init__(f"blocked on txn {blocking}")
        self.blocking = blocking
