"""Content constraints over candidate wire-frame byte sequences.

A constraint pairs a metric function with a comparison value, a mode,
and a packet target. The function registry is a closed enumeration:

* ``entropy_bits_per_byte`` — Shannon entropy of the empirical byte
  distribution, base 2, in [0, 8].
* ``printable_ascii_fraction`` — fraction of bytes in 0x20..0x7E.
* ``frame_length_bytes`` — total length of the byte sequence.
* ``byte_histogram_max_fraction`` — frequency of the most common byte.

All evaluation is pure and deterministic; constraints are evaluated
over the entire on-wire frame (length fields, payload, and padding),
because that is what an observer sees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

from .confdoc import Document, Entry, format_document, parse_document
from .errors import (
    ConfigError,
    EmptyInputError,
    MalformedDocumentError,
    MalformedTargetError,
    UnknownFunctionError,
    UnknownModeError,
    ValueOutOfRangeError,
)

# Absolute tolerance for EQ/NEQ on real-valued functions. frame_length
# comparisons are exact integer comparisons.
EQ_EPSILON = 1e-9

PRINTABLE_BYTES = bytes(range(0x20, 0x7F))

ENTROPY_FN = "entropy_bits_per_byte"
PRINTABLE_FN = "printable_ascii_fraction"
LENGTH_FN = "frame_length_bytes"
HIST_MAX_FN = "byte_histogram_max_fraction"

#: value range (inclusive) per function, used at parse/validate time
FUNCTION_RANGES: dict[str, tuple[float, float]] = {
    ENTROPY_FN: (0.0, 8.0),
    PRINTABLE_FN: (0.0, 1.0),
    LENGTH_FN: (0.0, float("inf")),
    HIST_MAX_FN: (0.0, 1.0),
}

FUNCTION_NAMES = tuple(FUNCTION_RANGES)

#: functions whose comparisons are exact integer comparisons
INTEGER_FUNCTIONS = frozenset({LENGTH_FN})


def printable_count(data: bytes) -> int:
    """Number of bytes in the printable ASCII range 0x20..0x7E."""
    return len(data) - len(data.translate(None, PRINTABLE_BYTES))


def byte_counts(data: bytes) -> np.ndarray:
    """256-slot histogram of byte values."""
    return np.bincount(np.frombuffer(data, dtype=np.uint8), minlength=256)


def shannon_entropy_bits(data: bytes) -> float:
    """Shannon entropy of the byte-value distribution, in bits per byte.

    0 * log 0 terms are dropped, so a constant input has entropy 0 and a
    perfectly uniform 256-symbol input has entropy 8.
    """
    if not data:
        raise EmptyInputError("entropy of empty input is undefined")
    counts = byte_counts(data)
    n = counts[counts > 0]
    p = n / len(data)
    return float(-(p * np.log2(p)).sum()) + 0.0


def eval_function(function: str, data: bytes) -> float:
    """Evaluate a registry function on a byte sequence.

    Raises UnknownFunctionError for names outside the registry and
    EmptyInputError when an entropy/fraction function gets empty input
    (frame_length_bytes accepts empty input).
    """
    if function == LENGTH_FN:
        return float(len(data))
    if function not in FUNCTION_RANGES:
        raise UnknownFunctionError(f"unknown constraint function {function!r}")
    if not data:
        raise EmptyInputError(f"{function} is undefined on empty input")
    if function == ENTROPY_FN:
        return shannon_entropy_bits(data)
    if function == PRINTABLE_FN:
        return printable_count(data) / len(data)
    # HIST_MAX_FN
    return int(byte_counts(data).max()) / len(data)


class Mode(Enum):
    """Comparison operator applied to (metric, value)."""

    EQ = "eq"
    NEQ = "neq"
    LT = "lt"
    LE = "le"
    GT = "gt"
    GE = "ge"

    @classmethod
    def from_text(cls, text: str) -> "Mode":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise UnknownModeError(f"unknown comparison mode {text!r}") from None

    def negated(self) -> "Mode":
        """The mode matching exactly the inputs this one rejects."""
        return _NEGATIONS[self]


_NEGATIONS = {
    Mode.EQ: Mode.NEQ,
    Mode.NEQ: Mode.EQ,
    Mode.LT: Mode.GE,
    Mode.LE: Mode.GT,
    Mode.GT: Mode.LE,
    Mode.GE: Mode.LT,
}


def compare(mode: Mode, metric: float, value: float, *, exact: bool) -> bool:
    """Apply a comparison mode; EQ/NEQ use EQ_EPSILON unless exact."""
    if mode is Mode.EQ:
        return metric == value if exact else abs(metric - value) <= EQ_EPSILON
    if mode is Mode.NEQ:
        return metric != value if exact else abs(metric - value) > EQ_EPSILON
    if mode is Mode.LT:
        return metric < value
    if mode is Mode.LE:
        return metric <= value
    if mode is Mode.GT:
        return metric > value
    return metric >= value


class TargetKind(Enum):
    ALL = "all"
    INDEX = "index"
    RANGE = "range"
    FIRST_N = "first"


@dataclass(frozen=True)
class PacketTarget:
    """Which packet ordinals (per flow direction) a constraint affects."""

    kind: TargetKind
    lo: int = 0
    hi: int = 0

    def __post_init__(self):
        if self.kind is TargetKind.ALL:
            return
        if self.lo < 0 or self.hi < 0:
            raise MalformedTargetError("target ordinals must be >= 0")
        if self.kind is TargetKind.RANGE and self.lo > self.hi:
            raise MalformedTargetError(
                f"range target requires lo <= hi, got {self.lo}-{self.hi}")
        if self.kind is TargetKind.FIRST_N and self.hi < 1:
            raise MalformedTargetError("first:<n> target requires n >= 1")

    @classmethod
    def all(cls) -> "PacketTarget":
        return cls(TargetKind.ALL)

    @classmethod
    def index(cls, i: int) -> "PacketTarget":
        return cls(TargetKind.INDEX, i, i)

    @classmethod
    def range(cls, lo: int, hi: int) -> "PacketTarget":
        return cls(TargetKind.RANGE, lo, hi)

    @classmethod
    def first(cls, n: int) -> "PacketTarget":
        return cls(TargetKind.FIRST_N, 0, n)

    def matches(self, ordinal: int) -> bool:
        if ordinal < 0:
            raise ValueError("packet ordinal must be >= 0")
        if self.kind is TargetKind.ALL:
            return True
        if self.kind is TargetKind.FIRST_N:
            return ordinal < self.hi
        return self.lo <= ordinal <= self.hi

    @classmethod
    def from_text(cls, text: str) -> "PacketTarget":
        text = text.strip().lower()
        if text == "all":
            return cls.all()
        kind, _, arg = text.partition(":")
        try:
            if kind == "index":
                return cls.index(int(arg))
            if kind == "first":
                return cls.first(int(arg))
            if kind == "range":
                lo_s, _, hi_s = arg.partition("-")
                return cls.range(int(lo_s), int(hi_s))
        except ValueError:
            raise MalformedTargetError(f"malformed target {text!r}") from None
        raise MalformedTargetError(f"malformed target {text!r}")

    def to_text(self) -> str:
        if self.kind is TargetKind.ALL:
            return "all"
        if self.kind is TargetKind.INDEX:
            return f"index:{self.lo}"
        if self.kind is TargetKind.RANGE:
            return f"range:{self.lo}-{self.hi}"
        return f"first:{self.hi}"


def matches_target(target: PacketTarget, ordinal: int) -> bool:
    return target.matches(ordinal)


@dataclass(frozen=True)
class Constraint:
    """One content rule: function, comparison value, mode, target."""

    function: str
    mode: Mode
    value: float
    target: PacketTarget
    type_hint: str | None = None  # optimizer hint slot; unused in evaluation

    def __post_init__(self):
        if self.function not in FUNCTION_RANGES:
            raise UnknownFunctionError(
                f"unknown constraint function {self.function!r}")
        if not math.isfinite(self.value):
            raise ValueOutOfRangeError(
                f"constraint value must be finite, got {self.value!r}")
        lo, hi = FUNCTION_RANGES[self.function]
        if not (lo <= self.value <= hi):
            raise ValueOutOfRangeError(
                f"value {self.value} outside [{lo}, {hi}] for {self.function}")
        if self.function in INTEGER_FUNCTIONS and self.value != int(self.value):
            raise ValueOutOfRangeError(
                f"{self.function} requires an integer value, got {self.value}")

    @property
    def exact(self) -> bool:
        return self.function in INTEGER_FUNCTIONS

    def holds_for(self, metric: float) -> bool:
        return compare(self.mode, metric, self.value, exact=self.exact)

    def describe(self) -> str:
        return (f"{self.function} {self.mode.value} {self.value:g} "
                f"on {self.target.to_text()}")


def check(constraint: Constraint, frame: bytes, ordinal: int) -> bool:
    """True when the constraint holds for this frame at this ordinal.

    A constraint whose target does not match the ordinal is vacuously
    satisfied.
    """
    if not constraint.target.matches(ordinal):
        return True
    return constraint.holds_for(eval_function(constraint.function, frame))


@dataclass(frozen=True)
class ConstraintSet:
    """Ordered collection of constraints, all of which must hold."""

    constraints: tuple[Constraint, ...] = ()
    name: str | None = None

    def __len__(self) -> int:
        return len(self.constraints)

    def __iter__(self):
        return iter(self.constraints)

    @classmethod
    def of(cls, *constraints: Constraint, name: str | None = None) -> "ConstraintSet":
        return cls(tuple(constraints), name)

    def relevant_at(self, ordinal: int) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.target.matches(ordinal))


def check_all(cset: ConstraintSet, frame: bytes,
              ordinal: int) -> tuple[bool, list[Constraint]]:
    """Conjunction of check() over the set.

    Returns (ok, violated) where violated preserves set order and is
    empty iff ok is True.
    """
    violated = [c for c in cset if not check(c, frame, ordinal)]
    return (not violated, violated)


# ---------------------------------------------------------------------------
# Configuration document handling
# ---------------------------------------------------------------------------

CONSTRAINT_SECTION = "constraint"
_ENTRY_KEYS = {"function", "mode", "value", "target", "type"}


def constraint_from_entry(entry: Entry, index: int) -> Constraint:
    """Build a Constraint from one parsed [constraint]/[rule] entry."""
    for key in entry.fields:
        if key not in _ENTRY_KEYS:
            raise MalformedDocumentError(
                f"unknown key {key!r}", line=entry.line_of(key),
                entry_index=index)
    for key in ("function", "mode", "value", "target"):
        if entry.get(key) is None:
            raise MalformedDocumentError(
                f"missing required key {key!r}", line=entry.line,
                entry_index=index)
    value_text = entry.get("value")
    try:
        value = float(value_text)
    except ValueError:
        raise MalformedDocumentError(
            f"value must be a number, got {value_text!r}",
            line=entry.line_of("value"), entry_index=index) from None
    try:
        return Constraint(
            function=entry.get("function"),
            mode=Mode.from_text(entry.get("mode")),
            value=value,
            target=PacketTarget.from_text(entry.get("target")),
            type_hint=entry.get("type"),
        )
    except ConfigError as exc:
        raise type(exc)(str(exc), line=entry.line, entry_index=index) from None


def constraint_set_from_document(doc: Document, *,
                                 allowed_top_keys: Iterable[str] = ()) -> ConstraintSet:
    allowed = {"name", *allowed_top_keys}
    for key in doc.top:
        if key not in allowed:
            raise MalformedDocumentError(
                f"unknown document key {key!r}", line=doc.top[key][1])
    constraints = []
    index = 0
    for entry in doc.entries:
        if entry.name != CONSTRAINT_SECTION:
            raise MalformedDocumentError(
                f"unknown section [{entry.name}]", line=entry.line,
                entry_index=index)
        constraints.append(constraint_from_entry(entry, index))
        index += 1
    return ConstraintSet(tuple(constraints), name=doc.top_get("name"))


def parse_constraint_set(text: str, *,
                         allowed_top_keys: Iterable[str] = ()) -> ConstraintSet:
    """Parse a constraint-set configuration document.

    The document is a sequence of ``[constraint]`` entries with keys
    function/mode/value/target and optional type; a top-level ``name``
    labels the set.
    """
    doc = parse_document(text)
    return constraint_set_from_document(doc, allowed_top_keys=allowed_top_keys)


def _entry_fields(c: Constraint) -> dict[str, str]:
    fields = {
        "function": c.function,
        "mode": c.mode.value,
        "value": repr(c.value),
        "target": c.target.to_text(),
    }
    if c.type_hint is not None:
        fields["type"] = c.type_hint
    return fields


def serialize_constraint_set(cset: ConstraintSet) -> str:
    """Render a set back to document text; parse() of it yields an equal set."""
    top = {"name": cset.name} if cset.name is not None else {}
    sections = [(CONSTRAINT_SECTION, _entry_fields(c)) for c in cset]
    return format_document(top, sections)
