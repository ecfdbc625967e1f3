"""TCP tunnel endpoints.

The CLIENT endpoint accepts plain local connections (from the user's
upstream tool), shapes their byte stream into constraint-satisfying
frames toward the SERVER endpoint, and de-shapes the reverse direction.
The SERVER endpoint mirrors this: it de-shapes what arrives from the
client and shapes what the forward destination sends back.

Directions are named from the client's flow perspective: ``out`` is
client -> server (shaped by the CLIENT endpoint), ``in`` is
server -> client (shaped by the SERVER endpoint), so one config file
pair can be shared by both ends.

Each connection runs two independent pipelines (shape and de-shape)
built from read/ingest, flush/shape, and timed-write stages joined by a
bounded transfer channel. A MalformedFrameError or
ShapingExhaustedError is fatal to its connection only; the endpoint
keeps serving other connections.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import random
from dataclasses import dataclass, field
from enum import Enum

from .capture import FrameCaptureWriter
from .clock import MonotonicClock
from .constraints import ConstraintSet
from .errors import (
    BindFailureError,
    MalformedFrameError,
    ShapingExhaustedError,
    ValueOutOfRangeError,
    WireshaperError,
)
from .framing import FrameDecoder
from .shaping import ShapeBuffer, ShaperConfig, ShapeStats
from .timing import DEFAULT_QUEUE_CAP, EmissionQueue, TimingPolicy

logger = logging.getLogger(__name__)

_READ_SIZE = 65536


class Role(Enum):
    CLIENT = "client"
    SERVER = "server"


class ConnState(Enum):
    OPEN = "open"
    HALF_CLOSED = "half-closed"
    CLOSED = "closed"
    ABORTED = "aborted"


def parse_address(text: str) -> tuple[str, int]:
    """Parse 'host:port' (IPv6 hosts in brackets)."""
    host, sep, port_s = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"address {text!r} is not host:port")
    try:
        port = int(port_s)
    except ValueError:
        raise ValueError(f"address {text!r} has a non-numeric port") from None
    if not (0 <= port <= 65535):
        raise ValueError(f"port {port} out of range")
    return host.strip("[]"), port


@dataclass(frozen=True)
class ProxyConfig:
    """Everything one endpoint needs to serve connections."""

    role: Role
    listen: tuple[str, int]
    peer: tuple[str, int]  # tunnel peer for CLIENT, forward destination for SERVER
    constraints_out: ConstraintSet = ConstraintSet()
    constraints_in: ConstraintSet = ConstraintSet()
    timing: TimingPolicy = TimingPolicy()
    shaper: ShaperConfig = field(default_factory=ShaperConfig)
    stats_interval_s: float | None = None
    capture_path: str | None = None

    def __post_init__(self):
        if self.listen == self.peer:
            raise ValueError("listen and peer/forward addresses must differ")
        if (self.timing.bucket_capacity is not None
                and self.timing.bucket_capacity < self.shaper.max_frame_len + 2):
            raise ValueOutOfRangeError(
                f"bucket_capacity_B {self.timing.bucket_capacity} must be >= "
                f"max_frame_len + 2 = {self.shaper.max_frame_len + 2}")

    @property
    def shaping_set(self) -> ConstraintSet:
        """The constraint set for the direction this endpoint originates."""
        return self.constraints_out if self.role is Role.CLIENT else self.constraints_in


@dataclass
class ConnectionStats:
    conn_id: int
    state: ConnState = ConnState.OPEN
    plain_in: int = 0      # bytes read from the plain side, pre-shaping
    plain_out: int = 0     # recovered payload bytes written to the plain side
    wire_sent: int = 0
    wire_received: int = 0
    frames_sent: int = 0
    frames_received: int = 0
    shape: ShapeStats = field(default_factory=ShapeStats)

    def summary(self) -> str:
        return (f"conn {self.conn_id} [{self.state.value}] "
                f"in={self.plain_in}B out={self.plain_out}B "
                f"frames={self.frames_sent}/{self.frames_received} "
                f"padding={self.shape.padding_bytes}B "
                f"retries={self.shape.retries} failures={self.shape.failures}")


async def pump_shaped_direction(source: asyncio.StreamReader,
                                sink: asyncio.StreamWriter,
                                cset: ConstraintSet,
                                policy: TimingPolicy,
                                config: ShaperConfig,
                                stats: ConnectionStats,
                                *,
                                clock: MonotonicClock | None = None,
                                rng: random.Random | None = None,
                                capture: FrameCaptureWriter | None = None) -> None:
    """ingest -> flush -> shape -> timed write, until source EOF, then drain.

    Write order equals the release schedule, which preserves frame
    (FIFO) order. On EOF the buffer is drained, queued frames are
    flushed under the timing policy, and EOF is propagated to the sink.
    """
    clock = clock or MonotonicClock()
    channel: asyncio.Queue[bytes | None] = asyncio.Queue(maxsize=DEFAULT_QUEUE_CAP)
    buffer = ShapeBuffer(config)

    async def read_and_shape() -> None:
        while True:
            chunk: bytes | None
            if buffer.pending_len == 0:
                chunk = await source.read(_READ_SIZE)
            else:
                deadline = buffer.oldest_arrival_ns + config.flush_period_ns
                timeout_s = max(0, deadline - clock.now_ns()) / 1e9
                try:
                    chunk = await asyncio.wait_for(source.read(_READ_SIZE), timeout_s)
                except asyncio.TimeoutError:
                    chunk = None
            if chunk == b"":
                break
            if chunk:
                stats.plain_in += len(chunk)
                buffer.ingest(chunk, clock.now_ns())
            while buffer.should_flush(clock.now_ns()):
                await channel.put(buffer.shape_once(cset, stats.shape))
        for frame in buffer.drain(cset, stats.shape):
            await channel.put(frame)
        await channel.put(None)

    async def timed_write() -> None:
        queue = EmissionQueue(policy, rng=rng, max_frames=DEFAULT_QUEUE_CAP)
        while True:
            frame = await channel.get()
            if frame is None:
                break
            queue.enqueue(frame)
            while len(queue):
                release_ns, head = queue.next_release(clock.now_ns())
                delay_ns = release_ns - clock.now_ns()
                if delay_ns > 0:
                    await asyncio.sleep(delay_ns / 1e9)
                sink.write(head)
                await sink.drain()
                queue.mark_emitted(clock.now_ns())
                stats.frames_sent += 1
                stats.wire_sent += len(head)
                if capture is not None:
                    capture.write(head)

    stages = {asyncio.create_task(read_and_shape()),
              asyncio.create_task(timed_write())}
    try:
        while stages:
            done, stages = await asyncio.wait(
                stages, return_when=asyncio.FIRST_EXCEPTION)
            for task in done:
                if task.exception() is not None:
                    raise task.exception()
    finally:
        for task in stages:
            task.cancel()
        if stages:
            await asyncio.gather(*stages, return_exceptions=True)
    if sink.can_write_eof():
        sink.write_eof()


async def pump_deshape_direction(source: asyncio.StreamReader,
                                 sink: asyncio.StreamWriter,
                                 stats: ConnectionStats) -> None:
    """Accumulate wire bytes, strip framing and padding, forward payloads."""
    decoder = FrameDecoder()
    while True:
        chunk = await source.read(_READ_SIZE)
        if not chunk:
            break
        stats.wire_received += len(chunk)
        payloads = decoder.feed(chunk)  # raises MalformedFrameError on desync
        for payload in payloads:
            stats.frames_received += 1
            stats.plain_out += len(payload)
            sink.write(payload)
        if payloads:
            await sink.drain()
    if decoder.residual:
        logger.warning("peer closed mid-frame, %d residual bytes dropped",
                       len(decoder.residual))
    if sink.can_write_eof():
        sink.write_eof()


class Endpoint:
    """One tunnel endpoint serving many concurrent connections."""

    def __init__(self, config: ProxyConfig, *, rng: random.Random | None = None):
        self.config = config
        self._rng = rng
        self._server: asyncio.base_events.Server | None = None
        self._capture: FrameCaptureWriter | None = None
        self._conn_ids = itertools.count(1)
        self._tasks: set[asyncio.Task] = set()
        self.connections: dict[int, ConnectionStats] = {}
        self.connections_total = 0
        self.shaping_failures = 0
        self._stats_task: asyncio.Task | None = None

    @property
    def bound_address(self) -> tuple[str, int]:
        if self._server is None:
            raise RuntimeError("endpoint is not started")
        sock = self._server.sockets[0]
        host, port = sock.getsockname()[:2]
        return host, port

    async def start(self) -> None:
        host, port = self.config.listen
        try:
            self._server = await asyncio.start_server(self._handle, host, port)
        except OSError as exc:
            raise BindFailureError(f"cannot bind {host}:{port}: {exc}") from exc
        if self.config.capture_path:
            self._capture = FrameCaptureWriter(self.config.capture_path)
        if self.config.stats_interval_s:
            self._stats_task = asyncio.create_task(self._log_stats())
        logger.info("%s endpoint listening on %s:%s",
                    self.config.role.value, *self.bound_address)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        if self._stats_task is not None:
            self._stats_task.cancel()
        for task in list(self._tasks):
            task.cancel()
        if self._tasks:
            await asyncio.gather(*self._tasks, return_exceptions=True)
        if self._capture is not None:
            self._capture.close()

    async def _log_stats(self) -> None:
        while True:
            await asyncio.sleep(self.config.stats_interval_s)
            active = [c for c in self.connections.values()
                      if c.state in (ConnState.OPEN, ConnState.HALF_CLOSED)]
            logger.info("stats: %d active / %d total connections, %d shaping failures",
                        len(active), self.connections_total, self.shaping_failures)
            for conn in active:
                logger.info("stats: %s", conn.summary())

    async def _handle(self, accepted_reader: asyncio.StreamReader,
                      accepted_writer: asyncio.StreamWriter) -> None:
        task = asyncio.current_task()
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)
        conn_id = next(self._conn_ids)
        peer_host, peer_port = self.config.peer
        try:
            dialed_reader, dialed_writer = await asyncio.open_connection(
                peer_host, peer_port)
        except OSError as exc:
            logger.warning("conn %d: peer %s:%d unreachable: %s",
                           conn_id, peer_host, peer_port, exc)
            accepted_writer.close()
            return

        # CLIENT accepts the plain side and dials the tunnel; SERVER is
        # the mirror image.
        if self.config.role is Role.CLIENT:
            plain = (accepted_reader, accepted_writer)
            tunnel = (dialed_reader, dialed_writer)
        else:
            plain = (dialed_reader, dialed_writer)
            tunnel = (accepted_reader, accepted_writer)

        stats = ConnectionStats(conn_id)
        self.connections[conn_id] = stats
        self.connections_total += 1
        shape_task = asyncio.create_task(pump_shaped_direction(
            plain[0], tunnel[1], self.config.shaping_set, self.config.timing,
            self.config.shaper, stats, rng=self._rng, capture=self._capture))
        deshape_task = asyncio.create_task(pump_deshape_direction(
            tunnel[0], plain[1], stats))
        try:
            await self._join_pumps(conn_id, stats, shape_task, deshape_task)
        finally:
            for writer in (accepted_writer, dialed_writer):
                writer.close()
            if stats.state is not ConnState.ABORTED:
                stats.state = ConnState.CLOSED

    async def _join_pumps(self, conn_id: int, stats: ConnectionStats,
                          *pumps: asyncio.Task) -> None:
        pending = set(pumps)
        try:
            while pending:
                done, pending = await asyncio.wait(
                    pending, return_when=asyncio.FIRST_COMPLETED)
                for task in done:
                    exc = task.exception()
                    if exc is not None:
                        self._abort(conn_id, stats, exc, pending)
                        if pending:
                            await asyncio.gather(*pending, return_exceptions=True)
                        return
                if pending:
                    stats.state = ConnState.HALF_CLOSED
        except asyncio.CancelledError:
            for task in pending:
                task.cancel()
            raise

    def _abort(self, conn_id: int, stats: ConnectionStats, exc: BaseException,
               pending: set[asyncio.Task]) -> None:
        stats.state = ConnState.ABORTED
        if isinstance(exc, ShapingExhaustedError):
            self.shaping_failures += 1
            logger.error("conn %d stalled: %s", conn_id, exc)
        elif isinstance(exc, MalformedFrameError):
            logger.error("conn %d desynchronized: %s", conn_id, exc)
        elif isinstance(exc, (OSError, WireshaperError)):
            logger.warning("conn %d aborted: %s", conn_id, exc)
        else:
            logger.error("conn %d aborted unexpectedly", conn_id, exc_info=exc)
        for task in pending:
            task.cancel()


async def run_endpoint(config: ProxyConfig,
                       shutdown: asyncio.Event | None = None,
                       *, rng: random.Random | None = None) -> int:
    """Serve until the shutdown event fires. Returns a process exit status."""
    endpoint = Endpoint(config, rng=rng)
    try:
        await endpoint.start()
    except BindFailureError as exc:
        logger.error("%s", exc)
        return 1
    try:
        if shutdown is None:
            shutdown = asyncio.Event()
        await shutdown.wait()
    finally:
        await endpoint.stop()
    return 0
