"""Exception hierarchy for the wireshaper package."""

from __future__ import annotations


class WireshaperError(Exception):
    """Base class for all wireshaper errors."""


class ConfigError(WireshaperError):
    """A configuration document failed to parse or validate.

    ``line`` is the 1-based line number in the source document and
    ``entry_index`` the 0-based index of the offending list entry,
    when known.
    """

    def __init__(self, message: str, *, line: int | None = None,
                 entry_index: int | None = None):
        self.line = line
        self.entry_index = entry_index
        prefix = ""
        if entry_index is not None:
            prefix += f"entry {entry_index}: "
        if line is not None:
            prefix += f"line {line}: "
        super().__init__(prefix + message)


class MalformedDocumentError(ConfigError):
    """Document syntax is invalid."""


class UnknownFunctionError(ConfigError):
    """Constraint function identifier is not in the registry."""


class UnknownModeError(ConfigError):
    """Comparison mode is not one of eq/neq/lt/le/gt/ge."""


class UnknownActionError(ConfigError):
    """Detector rule action is not flag/exempt."""


class ValueOutOfRangeError(ConfigError):
    """A numeric value lies outside its function's valid range."""


class MalformedTargetError(ConfigError):
    """Packet target expression is invalid."""


class ConflictingConstraintsError(ConfigError):
    """Mutually exclusive timing constraints were combined."""


class NegativeDurationError(ConfigError):
    """A duration or rate field is negative."""


class EmptyInputError(WireshaperError):
    """A metric function was applied to a zero-length byte sequence."""


class FramingError(WireshaperError):
    """Base class for wire-format errors."""


class FrameTooLargeError(FramingError):
    """Encoded frame would exceed the frame size limit or field width."""


class EmptyPayloadError(FramingError):
    """Data frames must carry at least one payload byte."""


class MalformedFrameError(FramingError):
    """Frame stream is desynchronized; the connection must be torn down."""


class BufferOverflowError(WireshaperError):
    """Shape buffer exceeded its pending-byte cap (backpressure signal)."""


class ShapingExhaustedError(WireshaperError):
    """Candidate search spent its budget without a satisfying frame.

    Fail-closed: no frame was emitted and pending bytes are unchanged.
    """

    def __init__(self, message: str, *, candidates: int = 0,
                 undeliverable: int = 0):
        self.candidates = candidates
        self.undeliverable = undeliverable
        super().__init__(message)


class QueueOverflowError(WireshaperError):
    """Emission queue exceeded its frame cap (backpressure signal)."""


class BindFailureError(WireshaperError):
    """Endpoint could not bind its listen address."""


class PeerUnreachableError(WireshaperError):
    """Counterpart connection could not be established."""
