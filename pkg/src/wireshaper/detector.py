"""Censor-rule simulator: evaluate flows against ad-hoc detection rules.

Rules reuse the constraint function registry so that shaping goals and
detection heuristics stay commensurable. Each rule carries an action:
FLAG marks the flow, EXEMPT shields a packet from FLAG rules. For every
packet, EXEMPT rules are evaluated before FLAG rules (an exemption wins)
regardless of their order in the rule list.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

from .confdoc import format_document, parse_document
from .constraints import (
    INTEGER_FUNCTIONS,
    Constraint,
    ConstraintSet,
    Mode,
    PacketTarget,
    compare,
    constraint_from_entry,
    eval_function,
)
from .errors import MalformedDocumentError, UnknownActionError


class RuleAction(Enum):
    FLAG = "flag"
    EXEMPT = "exempt"

    @classmethod
    def from_text(cls, text: str) -> "RuleAction":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise UnknownActionError(f"unknown rule action {text!r}") from None


@dataclass(frozen=True)
class DetectorRule:
    """A censor-side rule mirroring the constraint shape."""

    function: str
    mode: Mode
    value: float
    target: PacketTarget
    action: RuleAction

    def __post_init__(self):
        # same validity ranges as Constraint
        Constraint(self.function, self.mode, self.value, self.target)

    def matches(self, frame: bytes, ordinal: int) -> bool:
        """Rule fires: target covers the ordinal and the comparison holds."""
        if not self.target.matches(ordinal):
            return False
        metric = eval_function(self.function, frame)
        return compare(self.mode, metric, self.value,
                       exact=self.function in INTEGER_FUNCTIONS)


class PacketOutcome(Enum):
    PASSED = "passed"
    FLAGGED = "flagged"
    EXEMPTED = "exempted"
    SKIPPED = "skipped"


@dataclass(frozen=True)
class PacketResult:
    ordinal: int
    outcome: PacketOutcome
    rule_index: int | None = None


@dataclass(frozen=True)
class FlowVerdict:
    flagged: bool
    first_flagged_ordinal: int | None
    triggered_rules: tuple[int, ...]
    per_packet: tuple[PacketResult, ...]


def inspect_flow(frames: Iterable[bytes],
                 rules: Sequence[DetectorRule]) -> FlowVerdict:
    """Evaluate every frame at its ordinal; deterministic.

    Empty frames are skipped with a SKIPPED outcome. The flow is flagged
    iff some packet fired a FLAG rule without an EXEMPT rule firing on
    that same packet.
    """
    exempts = [(i, r) for i, r in enumerate(rules) if r.action is RuleAction.EXEMPT]
    flags = [(i, r) for i, r in enumerate(rules) if r.action is RuleAction.FLAG]
    per_packet: list[PacketResult] = []
    triggered: list[int] = []
    first_flagged: int | None = None
    for ordinal, frame in enumerate(frames):
        if not frame:
            per_packet.append(PacketResult(ordinal, PacketOutcome.SKIPPED))
            continue
        exempted_by = next(
            (i for i, r in exempts if r.matches(frame, ordinal)), None)
        if exempted_by is not None:
            per_packet.append(
                PacketResult(ordinal, PacketOutcome.EXEMPTED, exempted_by))
            continue
        flagged_by = next(
            (i for i, r in flags if r.matches(frame, ordinal)), None)
        if flagged_by is not None:
            per_packet.append(
                PacketResult(ordinal, PacketOutcome.FLAGGED, flagged_by))
            if first_flagged is None:
                first_flagged = ordinal
            for i, r in flags:
                if r.matches(frame, ordinal) and i not in triggered:
                    triggered.append(i)
            continue
        per_packet.append(PacketResult(ordinal, PacketOutcome.PASSED))
    return FlowVerdict(
        flagged=first_flagged is not None,
        first_flagged_ordinal=first_flagged,
        triggered_rules=tuple(triggered),
        per_packet=tuple(per_packet),
    )


RULE_SECTION = "rule"


def parse_rules(text: str) -> list[DetectorRule]:
    """Parse a rule-set document: [rule] entries, constraint keys + action."""
    doc = parse_document(text)
    for key in doc.top:
        if key != "name":
            raise MalformedDocumentError(
                f"unknown document key {key!r}", line=doc.top[key][1])
    rules: list[DetectorRule] = []
    for index, entry in enumerate(doc.entries):
        if entry.name != RULE_SECTION:
            raise MalformedDocumentError(
                f"unknown section [{entry.name}]", line=entry.line,
                entry_index=index)
        action_text = entry.fields.pop("action", None)
        if action_text is None:
            raise MalformedDocumentError(
                "missing required key 'action'", line=entry.line,
                entry_index=index)
        try:
            action = RuleAction.from_text(action_text[0])
        except UnknownActionError as exc:
            raise UnknownActionError(
                str(exc), line=action_text[1], entry_index=index) from None
        c = constraint_from_entry(entry, index)
        rules.append(DetectorRule(c.function, c.mode, c.value, c.target, action))
    return rules


def serialize_rules(rules: Sequence[DetectorRule]) -> str:
    sections = []
    for r in rules:
        sections.append((RULE_SECTION, {
            "function": r.function,
            "mode": r.mode.value,
            "value": repr(r.value),
            "target": r.target.to_text(),
            "action": r.action.value,
        }))
    return format_document({}, sections)


def rules_negating(cset: ConstraintSet) -> list[DetectorRule]:
    """FLAG rules that fire exactly when a constraint of the set is violated.

    A flow produced by a successful shaping run under the set must come
    out unflagged under these rules.
    """
    return [
        DetectorRule(c.function, c.mode.negated(), c.value, c.target,
                     RuleAction.FLAG)
        for c in cset
    ]
