"""Release scheduling for shaped frames under timing constraints.

A TimingPolicy is a conjunction of constraints; the release time of the
head frame is the latest of the per-constraint earliest times (and never
before "now"). Supported constraints: min/max gap between consecutive
releases, fixed inter-packet interval, uniform jitter added to the
minimum gap, and a token-bucket throughput cap.

All arithmetic uses integer nanoseconds and integer token units
(bytes scaled by 1e9), so schedules are exact under a virtual clock.
max_gap is advisory: with no chaff frames there is nothing to send on an
idle link, so it only produces a diagnostic when another constraint
delays an available frame beyond it.
"""

from __future__ import annotations

import logging
import random
from collections import deque
from dataclasses import dataclass

from .clock import NS_PER_S, ms_to_ns
from .confdoc import format_document, parse_document
from .errors import (
    ConflictingConstraintsError,
    MalformedDocumentError,
    NegativeDurationError,
    QueueOverflowError,
    ValueOutOfRangeError,
)

logger = logging.getLogger(__name__)

DEFAULT_QUEUE_CAP = 1024

_POLICY_KEYS = ("min_gap_ms", "max_gap_ms", "fixed_interval_ms", "jitter_ms",
                "throughput_Bps", "bucket_capacity_B")


@dataclass(frozen=True)
class TimingPolicy:
    """Timing constraints governing frame release. All fields optional."""

    min_gap_ns: int | None = None
    max_gap_ns: int | None = None
    fixed_interval_ns: int | None = None
    jitter_ns: int | None = None
    throughput_bps: int | None = None  # bytes per second
    bucket_capacity: int | None = None  # bytes

    def __post_init__(self):
        for name in ("min_gap_ns", "max_gap_ns", "fixed_interval_ns", "jitter_ns"):
            v = getattr(self, name)
            if v is not None and v < 0:
                raise NegativeDurationError(f"{name} must be >= 0, got {v}")
        if self.fixed_interval_ns is not None and (
                self.min_gap_ns is not None or self.max_gap_ns is not None
                or self.jitter_ns is not None):
            raise ConflictingConstraintsError(
                "fixed_interval is mutually exclusive with min/max gap and jitter")
        if self.min_gap_ns is not None and self.max_gap_ns is not None \
                and self.min_gap_ns > self.max_gap_ns:
            raise ConflictingConstraintsError("min_gap must be <= max_gap")
        if self.throughput_bps is not None:
            if self.throughput_bps <= 0:
                raise ValueOutOfRangeError(
                    f"throughput_Bps must be > 0, got {self.throughput_bps}")
            if self.bucket_capacity is None:
                raise MalformedDocumentError(
                    "throughput_Bps requires bucket_capacity_B")
        if self.bucket_capacity is not None and self.bucket_capacity <= 0:
            raise ValueOutOfRangeError(
                f"bucket_capacity_B must be > 0, got {self.bucket_capacity}")

    @property
    def unconstrained(self) -> bool:
        return (self.min_gap_ns is None and self.fixed_interval_ns is None
                and self.jitter_ns is None and self.throughput_bps is None)


def parse_timing_policy(text: str) -> TimingPolicy:
    """Parse a timing-policy document (flat key: value lines)."""
    doc = parse_document(text)
    if doc.entries:
        raise MalformedDocumentError(
            f"timing policy does not take [{doc.entries[0].name}] sections",
            line=doc.entries[0].line)
    values: dict[str, float] = {}
    for key, (raw, line) in doc.top.items():
        if key not in _POLICY_KEYS:
            raise MalformedDocumentError(f"unknown key {key!r}", line=line)
        try:
            values[key] = float(raw)
        except ValueError:
            raise MalformedDocumentError(
                f"{key} must be a number, got {raw!r}", line=line) from None

    def dur(key: str) -> int | None:
        if key not in values:
            return None
        if values[key] < 0:
            raise NegativeDurationError(f"{key} must be >= 0, got {values[key]}")
        return ms_to_ns(values[key])

    throughput = None
    if "throughput_Bps" in values:
        if values["throughput_Bps"] <= 0:
            raise ValueOutOfRangeError(
                f"throughput_Bps must be > 0, got {values['throughput_Bps']}")
        throughput = round(values["throughput_Bps"])
    capacity = None
    if "bucket_capacity_B" in values:
        capacity = round(values["bucket_capacity_B"])
    return TimingPolicy(
        min_gap_ns=dur("min_gap_ms"),
        max_gap_ns=dur("max_gap_ms"),
        fixed_interval_ns=dur("fixed_interval_ms"),
        jitter_ns=dur("jitter_ms"),
        throughput_bps=throughput,
        bucket_capacity=capacity,
    )


def serialize_timing_policy(policy: TimingPolicy) -> str:
    fields: dict[str, str] = {}
    for key, ns in (("min_gap_ms", policy.min_gap_ns),
                    ("max_gap_ms", policy.max_gap_ns),
                    ("fixed_interval_ms", policy.fixed_interval_ns),
                    ("jitter_ms", policy.jitter_ns)):
        if ns is not None:
            fields[key] = repr(ns / 1_000_000)
    if policy.throughput_bps is not None:
        fields["throughput_Bps"] = str(policy.throughput_bps)
    if policy.bucket_capacity is not None:
        fields["bucket_capacity_B"] = str(policy.bucket_capacity)
    return format_document(fields, [])


class EmissionQueue:
    """FIFO of framed byte sequences awaiting timed release.

    next_release() binds the head frame to a release time (the jitter
    draw happens once per frame); mark_emitted() pops it and settles the
    gap/bucket state against the actual emission time.
    """

    def __init__(self, policy: TimingPolicy, *,
                 rng: random.Random | None = None,
                 max_frames: int = DEFAULT_QUEUE_CAP):
        self.policy = policy
        self._rng = rng or random.Random()
        self._max_frames = max_frames
        self._frames: deque[bytes] = deque()
        self._last_emit_ns: int | None = None
        self._bound: tuple[int, bytes] | None = None
        # Token state is scaled: _tokens is bytes * 1e9, refilled at
        # throughput_bps * elapsed_ns per nanosecond step — exact integers.
        self._tokens = (policy.bucket_capacity or 0) * NS_PER_S
        self._bucket_updated_ns: int | None = None
        self.max_gap_breaches = 0

    def __len__(self) -> int:
        return len(self._frames)

    @property
    def last_emit_ns(self) -> int | None:
        return self._last_emit_ns

    @property
    def bucket_tokens(self) -> float:
        """Current token balance in bytes (diagnostic view)."""
        return self._tokens / NS_PER_S

    def enqueue(self, frame: bytes) -> None:
        if len(self._frames) >= self._max_frames:
            raise QueueOverflowError(
                f"emission queue is at its cap of {self._max_frames} frames")
        self._frames.append(frame)

    def _refill(self, now_ns: int) -> None:
        if self.policy.throughput_bps is None:
            return
        if self._bucket_updated_ns is None:
            self._bucket_updated_ns = now_ns
            return
        elapsed = now_ns - self._bucket_updated_ns
        if elapsed > 0:
            cap = self.policy.bucket_capacity * NS_PER_S
            self._tokens = min(cap, self._tokens + self.policy.throughput_bps * elapsed)
            self._bucket_updated_ns = now_ns

    def next_release(self, now_ns: int) -> tuple[int, bytes] | None:
        """Earliest release time for the head frame, or None when empty."""
        if self._bound is not None:
            return self._bound
        if not self._frames:
            return None
        frame = self._frames[0]
        policy = self.policy
        release = now_ns
        if self._last_emit_ns is not None:
            if policy.fixed_interval_ns is not None:
                release = max(release, self._last_emit_ns + policy.fixed_interval_ns)
            if policy.min_gap_ns is not None or policy.jitter_ns is not None:
                gap = policy.min_gap_ns or 0
                if policy.jitter_ns:
                    gap += self._rng.randint(0, policy.jitter_ns)
                release = max(release, self._last_emit_ns + gap)
        if policy.throughput_bps is not None:
            self._refill(now_ns)
            needed = len(frame) * NS_PER_S
            if needed > policy.bucket_capacity * NS_PER_S:
                raise ValueOutOfRangeError(
                    f"frame of {len(frame)} bytes exceeds bucket capacity "
                    f"{policy.bucket_capacity}")
            deficit = needed - self._tokens
            if deficit > 0:
                wait = -(-deficit // policy.throughput_bps)  # ceil division
                release = max(release, now_ns + wait)
        if (policy.max_gap_ns is not None and self._last_emit_ns is not None
                and release - self._last_emit_ns > policy.max_gap_ns):
            self.max_gap_breaches += 1
            logger.warning(
                "release delayed %.3f ms past max_gap by other constraints",
                (release - self._last_emit_ns - policy.max_gap_ns) / 1e6)
        self._bound = (release, frame)
        return self._bound

    def mark_emitted(self, now_ns: int) -> bytes:
        """Record the head frame as sent at now_ns and pop it."""
        if not self._frames:
            raise ValueError("mark_emitted on an empty queue")
        frame = self._frames.popleft()
        self._bound = None
        self._last_emit_ns = now_ns
        if self.policy.throughput_bps is not None:
            self._refill(now_ns)
            self._tokens = max(0, self._tokens - len(frame) * NS_PER_S)
        return frame
