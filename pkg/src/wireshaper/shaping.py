"""Frame synthesis: buffered bytes in, constraint-satisfying frames out.

The search runs two phases over candidate frames, counting every
candidate evaluation against a budget:

* Phase 1, length reduction: try payload sizes K = K0, K0 - step, ...
  down to 1 with no padding, where K0 = min(pending, capacity).
* Phase 2, content padding (fallback): keep K fixed at K0 and try
  padding lengths P = 1, 2, ... ; for each P, padding contents are
  enumerated as a base-256 counter starting at all zeros, incrementing
  the last byte fastest.

The first candidate that satisfies every constraint at the frame's
ordinal wins. If the budget is spent (or the candidate space runs out)
the search fails closed: no frame is emitted and pending bytes are kept.

Candidate metrics are maintained incrementally (byte histogram, running
n*log2(n) sum, printable count), so a candidate evaluation is O(1) in
frame size after the initial histogram.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from time import perf_counter_ns

import numpy as np

from .constraints import (
    ENTROPY_FN,
    HIST_MAX_FN,
    LENGTH_FN,
    PRINTABLE_FN,
    Constraint,
    ConstraintSet,
    printable_count,
)
from .errors import BufferOverflowError, ShapingExhaustedError
from .framing import HEADER_LEN, encode_frame, payload_capacity

_MAX_TOTAL = 65538  # largest on-wire frame plus one, sizes the n*log2(n) table
_RESYNC_EVERY = 16384  # incremental-entropy refresh interval, bounds float drift

_nlogn: list[float] = []
_nlogn_np: np.ndarray | None = None
_printable_flag = [1 if 0x20 <= b <= 0x7E else 0 for b in range(256)]


def _nlogn_table() -> list[float]:
    global _nlogn, _nlogn_np
    if not _nlogn:
        n = np.arange(_MAX_TOTAL, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = n * np.log2(n)
        t[0] = 0.0
        _nlogn_np = t
        _nlogn = t.tolist()
    return _nlogn


@dataclass
class ShaperConfig:
    """Tunables for buffering and the candidate search."""

    max_frame_len: int = 1400
    flush_period_ns: int = 20_000_000
    reduction_step: int = 1
    padding_budget: int = 65536
    max_padding_len: int = 256
    pending_cap: int = 4 * 1024 * 1024

    def __post_init__(self):
        if not (5 <= self.max_frame_len <= 65537):
            raise ValueError("max_frame_len must be in [5, 65537]")
        if self.reduction_step < 1:
            raise ValueError("reduction_step must be >= 1")
        if self.padding_budget < 1:
            raise ValueError("padding_budget must be >= 1")
        if self.max_padding_len < 1:
            raise ValueError("max_padding_len must be >= 1")
        if self.flush_period_ns < 0:
            raise ValueError("flush_period_ns must be >= 0")
        if self.pending_cap < 1:
            raise ValueError("pending_cap must be >= 1")

    @property
    def capacity(self) -> int:
        """Largest payload one frame may carry."""
        return payload_capacity(self.max_frame_len)


@dataclass
class ShapeStats:
    """Counters accumulated across shape_once calls."""

    frames: int = 0
    candidates: int = 0
    padding_bytes: int = 0
    failures: int = 0
    profile: bool = False
    search_ns: int = 0
    encode_ns: int = 0

    @property
    def retries(self) -> int:
        """Candidate evaluations beyond the first per emitted frame."""
        return max(0, self.candidates - self.frames)


class _ByteStats:
    """Histogram-derived metrics over the current candidate's bytes.

    Tracks whatever the constraint set needs: printable count, and/or the
    full histogram with a running sum of n*log2(n) (for entropy) and the
    max count (for histogram-max), all updatable in O(1) per byte.
    """

    __slots__ = ("track_hist", "track_print", "counts", "count_of",
                 "max_count", "nlogn", "printable", "_mutations",
                 "_log2_total", "_log2_for")

    def __init__(self, track_hist: bool, track_print: bool):
        self.track_hist = track_hist
        self.track_print = track_print
        if track_hist:
            _nlogn_table()
        self.counts = [0] * 256 if track_hist else None
        self.count_of: dict[int, int] = {}
        self.max_count = 0
        self.nlogn = 0.0
        self.printable = 0
        self._mutations = 0
        self._log2_total = 0.0
        self._log2_for = 0

    def init_from(self, counts: np.ndarray | None, printable: int) -> None:
        """Adopt precomputed candidate statistics (histogram and printable)."""
        if self.track_print:
            self.printable = printable
        if self.track_hist:
            self.counts = counts.tolist()
            nz = counts[counts > 0]
            self.nlogn = float(_nlogn_np[nz].sum())
            self.max_count = int(counts.max())
            vals, reps = np.unique(nz, return_counts=True)
            self.count_of = dict(zip(vals.tolist(), reps.tolist()))

    def clone(self) -> "_ByteStats":
        other = _ByteStats.__new__(_ByteStats)
        other.track_hist = self.track_hist
        other.track_print = self.track_print
        other.counts = self.counts.copy() if self.counts is not None else None
        other.count_of = dict(self.count_of)
        other.max_count = self.max_count
        other.nlogn = self.nlogn
        other.printable = self.printable
        other._mutations = self._mutations
        other._log2_total = self._log2_total
        other._log2_for = self._log2_for
        return other

    def add(self, b: int) -> None:
        if self.track_print:
            self.printable += _printable_flag[b]
        if self.track_hist:
            counts = self.counts
            c = counts[b]
            counts[b] = c + 1
            count_of = self.count_of
            if c:
                count_of[c] -= 1
            count_of[c + 1] = count_of.get(c + 1, 0) + 1
            if c + 1 > self.max_count:
                self.max_count = c + 1
            t = _nlogn
            self.nlogn += t[c + 1] - t[c]
            self._mutations += 1

    def remove(self, b: int) -> None:
        if self.track_print:
            self.printable -= _printable_flag[b]
        if self.track_hist:
            counts = self.counts
            c = counts[b]
            counts[b] = c - 1
            count_of = self.count_of
            count_of[c] -= 1
            if c > 1:
                count_of[c - 1] = count_of.get(c - 1, 0) + 1
            if c == self.max_count and count_of[c] == 0:
                self.max_count = c - 1
            t = _nlogn
            self.nlogn += t[c - 1] - t[c]
            self._mutations += 1

    def entropy(self, total: int) -> float:
        if self._mutations >= _RESYNC_EVERY:
            t = _nlogn
            self.nlogn = math.fsum(t[c] for c in self.counts if c)
            self._mutations = 0
        if total != self._log2_for:
            self._log2_for = total
            self._log2_total = math.log2(total)
        return self._log2_total - self.nlogn / total


def _passes(relevant: tuple[Constraint, ...], total: int,
            stats: _ByteStats | None) -> bool:
    for c in relevant:
        fn = c.function
        if fn == LENGTH_FN:
            metric = float(total)
        elif fn == PRINTABLE_FN:
            metric = stats.printable / total
        elif fn == ENTROPY_FN:
            metric = stats.entropy(total)
        else:  # HIST_MAX_FN
            metric = stats.max_count / total
        if not c.holds_for(metric):
            return False
    return True


def _header_bytes(payload_len: int, padding_len: int) -> tuple[int, int, int, int]:
    outer = 2 + payload_len + padding_len
    return (outer >> 8, outer & 0xFF, payload_len >> 8, payload_len & 0xFF)


def synthesize_frame(data: bytes, ordinal: int, cset: ConstraintSet,
                     config: ShaperConfig,
                     stats: ShapeStats | None = None) -> tuple[int, bytes]:
    """Search for the first satisfying frame over a pending-byte prefix.

    ``data`` must be the first min(pending, capacity) bytes of the
    buffer. Returns (payload_bytes_consumed, frame_bytes); raises
    ShapingExhaustedError when no candidate satisfies the set within the
    evaluation budget.
    """
    k0 = len(data)
    if k0 < 1:
        raise ValueError("synthesize_frame requires at least 1 pending byte")
    if k0 > config.capacity:
        raise ValueError("data exceeds frame payload capacity")

    t0 = perf_counter_ns() if stats is not None and stats.profile else 0
    constraints = cset.constraints
    if not constraints:
        relevant: tuple[Constraint, ...] = ()
    elif len(constraints) == 1:
        c0 = constraints[0]
        relevant = constraints if c0.target.matches(ordinal) else ()
    else:
        relevant = tuple(c for c in constraints if c.target.matches(ordinal))

    # First candidate (full prefix, no padding) on the fast path: compute
    # only the metrics this set needs, with no incremental bookkeeping.
    # The overwhelmingly common case is that it passes.
    header = _header_bytes(k0, 0)
    counts_np: np.ndarray | None = None
    printable = 0
    track_print = False
    track_hist = False
    total = HEADER_LEN + k0
    first_ok = True
    for c in relevant:
        fn = c.function
        if fn == LENGTH_FN:
            metric = float(total)
        elif fn == PRINTABLE_FN:
            if not track_print:
                track_print = True
                printable = printable_count(data) + sum(
                    _printable_flag[b] for b in header)
            metric = printable / total
        else:
            if not track_hist:
                track_hist = True
                _nlogn_table()
                counts_np = np.bincount(np.frombuffer(data, dtype=np.uint8),
                                        minlength=256)
                for b in header:
                    counts_np[b] += 1
            if fn == ENTROPY_FN:
                metric = math.log2(total) - float(_nlogn_np[counts_np].sum()) / total
            else:  # HIST_MAX_FN
                metric = int(counts_np.max()) / total
        if not c.holds_for(metric):
            first_ok = False
            break
    evals = 1
    budget = config.padding_budget

    def finish(consumed: int, padding: bytes) -> tuple[int, bytes]:
        if stats is not None:
            stats.frames += 1
            stats.candidates += evals
            stats.padding_bytes += len(padding)
            if stats.profile:
                t1 = perf_counter_ns()
                stats.search_ns += t1 - t0
        frame = encode_frame(data[:consumed], padding, config.max_frame_len)
        if stats is not None and stats.profile:
            stats.encode_ns += perf_counter_ns() - t1
        return consumed, frame

    def exhausted() -> ShapingExhaustedError:
        if stats is not None:
            stats.failures += 1
            stats.candidates += evals
            if stats.profile:
                stats.search_ns += perf_counter_ns() - t0
        return ShapingExhaustedError(
            f"no satisfying frame at ordinal {ordinal} within "
            f"{evals} candidate evaluations", candidates=evals)

    if first_ok:
        return finish(k0, b"")
    if evals >= budget:
        raise exhausted()

    # The slow path needs every metric kind the set may ask about.
    track_print = any(c.function == PRINTABLE_FN for c in relevant)
    track_hist = any(c.function in (ENTROPY_FN, HIST_MAX_FN) for c in relevant)
    if track_print or track_hist:
        if track_hist and counts_np is None:
            counts_np = np.bincount(np.frombuffer(data, dtype=np.uint8),
                                    minlength=256)
            for b in header:
                counts_np[b] += 1
        if track_print and not printable:
            printable = printable_count(data) + sum(
                _printable_flag[b] for b in header)
        state = _ByteStats(track_hist, track_print)
        state.init_from(counts_np, printable)
    else:
        state = None

    # Phase 1: length reduction, no padding. The K0 candidate was already
    # evaluated above, so stepping starts immediately.
    k = k0
    base: _ByteStats | None = None  # payload+header stats at K0, for phase 2
    while True:
        k_next = k - config.reduction_step
        if k_next < 1:
            break
        if state is not None:
            if base is None:
                base = state.clone()
            for b in data[k_next:k]:
                state.remove(b)
            for old, new in zip(_header_bytes(k, 0), _header_bytes(k_next, 0)):
                if old != new:
                    state.remove(old)
                    state.add(new)
        k = k_next
        evals += 1
        if _passes(relevant, HEADER_LEN + k, state):
            return finish(k, b"")
        if evals >= budget:
            raise exhausted()
    if state is not None and base is None:
        base = state  # phase 1 had a single candidate; state still at K0

    # Phase 2: content padding at K = K0.
    max_pad = min(config.max_padding_len, config.capacity - k0)
    for pad_len in range(1, max_pad + 1):
        if state is None:
            # Metrics ignore byte contents, so all 256^P candidates of
            # this padding length agree; account for them in bulk.
            evals += 1
            if _passes(relevant, HEADER_LEN + k0 + pad_len, None):
                return finish(k0, bytes(pad_len))
            remaining = 256 ** pad_len - 1
            evals = min(budget, evals + remaining)
            if evals >= budget:
                raise exhausted()
            continue

        cur = base.clone()
        for old, new in zip(_header_bytes(k0, 0), _header_bytes(k0, pad_len)):
            if old != new:
                cur.remove(old)
                cur.add(new)
        pad = bytearray(pad_len)
        for _ in range(pad_len):
            cur.add(0)
        total = HEADER_LEN + k0 + pad_len
        while True:
            evals += 1
            if _passes(relevant, total, cur):
                return finish(k0, bytes(pad))
            if evals >= budget:
                raise exhausted()
            # Advance the base-256 counter, last byte fastest.
            i = pad_len - 1
            while True:
                old_b = pad[i]
                if old_b == 0xFF:
                    pad[i] = 0
                    cur.remove(0xFF)
                    cur.add(0)
                    i -= 1
                    if i < 0:
                        break  # counter rolled over: this P is exhausted
                else:
                    pad[i] = old_b + 1
                    cur.remove(old_b)
                    cur.add(old_b + 1)
                    break
            if i < 0:
                break
    raise exhausted()


class _Speculation:
    """Precomputed first-candidate verdicts for upcoming full frames.

    Valid only while the same constraint set keeps being applied to
    full-capacity frames and every speculated frame passes (a pass
    consumes exactly the capacity, keeping later offsets aligned). Any
    deviation discards the remainder; correctness never depends on this
    cache, only speed does.
    """

    __slots__ = ("cset", "verdicts", "row", "rows")

    def __init__(self, cset: ConstraintSet, verdicts, rows: int):
        self.cset = cset
        self.verdicts = verdicts  # None means every row passes
        self.row = 0
        self.rows = rows


_SPECULATE_MIN_FRAMES = 8
_SPECULATE_MAX_FRAMES = 1024


def _all_targets_all(cset: ConstraintSet) -> bool:
    from .constraints import TargetKind
    return all(c.target.kind is TargetKind.ALL for c in cset.constraints)


def _vector_holds(c: Constraint, metrics: np.ndarray) -> np.ndarray:
    """Vectorized compare() with identical IEEE semantics per element."""
    from .constraints import EQ_EPSILON, Mode
    v = c.value
    if c.mode is Mode.EQ:
        return metrics == v if c.exact else np.abs(metrics - v) <= EQ_EPSILON
    if c.mode is Mode.NEQ:
        return metrics != v if c.exact else np.abs(metrics - v) > EQ_EPSILON
    if c.mode is Mode.LT:
        return metrics < v
    if c.mode is Mode.LE:
        return metrics <= v
    if c.mode is Mode.GT:
        return metrics > v
    return metrics >= v


def _build_speculation(cset: ConstraintSet, window: bytes, rows: int,
                       capacity: int) -> _Speculation:
    content = [c for c in cset.constraints if c.function != LENGTH_FN]
    length_only = [c for c in cset.constraints if c.function == LENGTH_FN]
    verdicts = None
    total = float(HEADER_LEN + capacity)
    for c in length_only:
        if not c.holds_for(total):
            return _Speculation(cset, [False] * rows, rows)
    if content:
        from ._accel import batch_first_candidate_metrics
        metrics = batch_first_candidate_metrics(
            window, rows, capacity, bytes(_header_bytes(capacity, 0)),
            need_entropy=any(c.function == ENTROPY_FN for c in content),
            need_max=any(c.function == HIST_MAX_FN for c in content),
            need_printable=any(c.function == PRINTABLE_FN for c in content))
        mask = np.ones(rows, dtype=bool)
        for c in content:
            mask &= _vector_holds(c, metrics[c.function])
        # all-pass batches take the same no-check fast path as empty sets
        verdicts = None if mask.all() else mask.tolist()
    return _Speculation(cset, verdicts, rows)


class ShapeBuffer:
    """Pending unshaped bytes for one stream direction.

    Tracks arrival time of the oldest pending byte (for flush-period
    decisions) and the packet ordinal counter for the direction.
    """

    def __init__(self, config: ShaperConfig):
        self.config = config
        self._chunks: deque[tuple[bytes, int]] = deque()
        self._head_offset = 0
        self._pending = 0
        self._spec: _Speculation | None = None
        self._spec_block: ConstraintSet | None = None
        self.emitted_count = 0

    @property
    def pending_len(self) -> int:
        return self._pending

    @property
    def oldest_arrival_ns(self) -> int | None:
        return self._chunks[0][1] if self._chunks else None

    def ingest(self, data: bytes, now_ns: int) -> None:
        """Append bytes stamped with their arrival time.

        Raises BufferOverflowError (leaving the buffer unchanged) when
        the pending cap would be exceeded; that is the backpressure
        signal to the reader.
        """
        if not data:
            return
        if self._pending + len(data) > self.config.pending_cap:
            raise BufferOverflowError(
                f"pending {self._pending} + {len(data)} bytes would exceed "
                f"cap {self.config.pending_cap}")
        if not isinstance(data, bytes):
            data = bytes(data)
        self._chunks.append((data, now_ns))
        self._pending += len(data)

    def should_flush(self, now_ns: int) -> bool:
        """Capacity reached, or the oldest byte has waited a full period."""
        if self._pending >= self.config.capacity:
            return True
        if not self._chunks:
            return False
        return now_ns - self._chunks[0][1] >= self.config.flush_period_ns

    def _peek(self, k: int) -> bytes:
        head, _ = self._chunks[0]
        if len(head) - self._head_offset >= k:
            return head[self._head_offset:self._head_offset + k]
        pieces = []
        got = 0
        offset = self._head_offset
        for chunk, _ in self._chunks:
            piece = chunk[offset:offset + (k - got)]
            pieces.append(piece)
            got += len(piece)
            offset = 0
            if got == k:
                break
        return b"".join(pieces)

    def _peek_view(self, k: int):
        """Zero-copy view of the first k bytes when they sit in one chunk."""
        head, _ = self._chunks[0]
        if len(head) - self._head_offset >= k:
            return memoryview(head)[self._head_offset:self._head_offset + k]
        return self._peek(k)

    def _consume(self, k: int) -> None:
        self._pending -= k
        while k:
            head, _ = self._chunks[0]
            avail = len(head) - self._head_offset
            if avail > k:
                self._head_offset += k
                return
            k -= avail
            self._chunks.popleft()
            self._head_offset = 0

    def _try_speculative(self, cset: ConstraintSet,
                         stats: ShapeStats | None) -> bytes | None:
        """Fast path: serve a full frame from precomputed batch verdicts."""
        capacity = self.config.capacity
        spec = self._spec
        if spec is not None and (spec.cset is not cset or spec.row >= spec.rows):
            self._spec = spec = None
        if spec is None:
            if (self._pending < capacity * _SPECULATE_MIN_FRAMES
                    or cset is self._spec_block
                    or not _all_targets_all(cset)):
                return None
            rows = min(self._pending // capacity, _SPECULATE_MAX_FRAMES)
            need_window = any(c.function != LENGTH_FN for c in cset.constraints)
            window = self._peek_view(rows * capacity) if need_window else b""
            self._spec = spec = _build_speculation(cset, window, rows, capacity)
        if self._pending < capacity:
            self._spec = None
            return None
        if spec.verdicts is not None and not spec.verdicts[spec.row]:
            # this frame needs the real search; later offsets may shift,
            # and rebuilding per frame would be pathological, so block
            # speculation for this set until a first candidate passes.
            self._spec = None
            self._spec_block = cset
            return None
        spec.row += 1
        frame = encode_frame(self._peek(capacity), b"", self.config.max_frame_len)
        self._consume(capacity)
        self.emitted_count += 1
        if stats is not None:
            stats.frames += 1
            stats.candidates += 1
        return frame

    def shape_once(self, cset: ConstraintSet,
                   stats: ShapeStats | None = None) -> bytes:
        """Synthesize one frame from the front of the buffer.

        On success the consumed payload leaves the buffer and the
        ordinal counter advances; on ShapingExhaustedError the buffer is
        untouched.
        """
        if self._pending == 0:
            raise ValueError("shape_once on an empty buffer")
        frame = self._try_speculative(cset, stats)
        if frame is not None:
            return frame
        k0 = min(self._pending, self.config.capacity)
        data = self._peek(k0)
        consumed, frame = synthesize_frame(
            data, self.emitted_count, cset, self.config, stats)
        if (cset is self._spec_block and k0 == self.config.capacity
                and len(frame) == HEADER_LEN + k0):
            self._spec_block = None  # first candidates pass again
        self._consume(consumed)
        self.emitted_count += 1
        return frame

    def drain(self, cset: ConstraintSet,
              stats: ShapeStats | None = None) -> list[bytes]:
        """Shape until the buffer is empty (end-of-stream path)."""
        frames = []
        while self._pending:
            try:
                frames.append(self.shape_once(cset, stats))
            except ShapingExhaustedError as exc:
                exc.undeliverable = self._pending
                raise
        return frames
