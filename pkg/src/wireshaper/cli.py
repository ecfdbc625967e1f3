"""Command-line interface.

Subcommands: ``client`` and ``server`` run tunnel endpoints, ``bench``
measures shaping overhead, ``detect`` runs the censor-rule simulator
over a captured flow, ``check-config`` validates configuration files,
and ``serve`` starts the HTTP control-plane API.

Verbosity comes from the WIRESHAPER_LOG environment variable
(error|warn|info|debug). Exit codes: 0 success, 1 runtime/config error
(with the parse location), 2 usage error.
"""

from __future__ import annotations

import argparse
import asyncio
import logging
import os
import signal
import sys

from . import __version__
from .bench import (
    DEFAULT_BENCH_SEED,
    DEFAULT_BENCH_STREAM_SIZE,
    default_bench_config,
    default_bench_sets,
    format_report,
    run_bench,
)
from .capture import load_flow
from .clock import ms_to_ns
from .constraints import ConstraintSet
from .detector import parse_rules, inspect_flow
from .errors import ConfigError, WireshaperError
from .proxy import ProxyConfig, Role, parse_address, run_endpoint
from .shaping import ShaperConfig
from .timing import TimingPolicy, parse_timing_policy

logger = logging.getLogger(__name__)

_LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING,
               "info": logging.INFO, "debug": logging.DEBUG}

#: document-level keys a constraints file may carry to tune its
#: direction's shaper alongside the constraint entries
SHAPER_DOC_KEYS = ("max_frame_len", "flush_period_ms", "reduction_step",
                   "padding_budget", "max_padding_len", "pending_cap_bytes")


def setup_logging() -> None:
    level_name = os.environ.get("WIRESHAPER_LOG", "warn").lower()
    level = _LOG_LEVELS.get(level_name, logging.WARNING)
    logging.basicConfig(
        level=level,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def load_shaping_document(path: str) -> tuple[ConstraintSet, ShaperConfig]:
    """Read a constraints file; top-level keys may tune the shaper."""
    from .confdoc import parse_document
    from .constraints import constraint_set_from_document
    from .errors import MalformedDocumentError

    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    doc = parse_document(text)
    cset = constraint_set_from_document(doc, allowed_top_keys=SHAPER_DOC_KEYS)
    kwargs = {}
    for key in SHAPER_DOC_KEYS:
        raw = doc.top_get(key)
        if raw is None:
            continue
        line = doc.top[key][1]
        try:
            value = float(raw)
        except ValueError:
            raise MalformedDocumentError(
                f"{key} must be a number, got {raw!r}", line=line) from None
        if key == "flush_period_ms":
            kwargs["flush_period_ns"] = ms_to_ns(value)
        elif key == "pending_cap_bytes":
            kwargs["pending_cap"] = int(value)
        else:
            kwargs[key] = int(value)
    try:
        config = ShaperConfig(**kwargs)
    except ValueError as exc:
        raise MalformedDocumentError(str(exc)) from None
    return cset, config


def load_timing(path: str | None) -> TimingPolicy:
    if path is None:
        return TimingPolicy()
    with open(path, "r", encoding="utf-8") as fh:
        return parse_timing_policy(fh.read())


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 1


def _endpoint_config(args, role: Role) -> ProxyConfig:
    constraints_out = ConstraintSet()
    constraints_in = ConstraintSet()
    shaper = ShaperConfig()
    if args.constraints:
        constraints_out, shaper = load_shaping_document(args.constraints)
        constraints_in = constraints_out
    if args.constraints_out:
        constraints_out, shaper = load_shaping_document(args.constraints_out)
    if args.constraints_in:
        constraints_in, shaper_in = load_shaping_document(args.constraints_in)
        if role is Role.SERVER:
            shaper = shaper_in
    peer = args.peer if role is Role.CLIENT else args.forward
    return ProxyConfig(
        role=role,
        listen=parse_address(args.listen),
        peer=parse_address(peer),
        constraints_out=constraints_out,
        constraints_in=constraints_in,
        timing=load_timing(args.timing),
        shaper=shaper,
        stats_interval_s=args.stats,
        capture_path=args.capture_frames,
    )


async def _serve_endpoint(config: ProxyConfig) -> int:
    shutdown = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, shutdown.set)
        except NotImplementedError:  # pragma: no cover - non-posix
            pass
    return await run_endpoint(config, shutdown)


def cmd_endpoint(args, role: Role) -> int:
    try:
        config = _endpoint_config(args, role)
    except (ConfigError, ValueError, OSError) as exc:
        return _fail(str(exc))
    return asyncio.run(_serve_endpoint(config))


def cmd_bench(args) -> int:
    if args.size < 1024 * 1024:
        return _fail("bench requires --size of at least 1 MiB for a stable "
                     "measurement")
    try:
        if args.constraints:
            sets = [ConstraintSet.of(name="baseline")]
            for path in args.constraints:
                cset, _ = load_shaping_document(path)
                sets.append(cset)
        else:
            sets = default_bench_sets()
        config = default_bench_config()
        if args.frame_len:
            config = ShaperConfig(max_frame_len=args.frame_len)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc))
    try:
        report = run_bench(args.size, sets, args.seed, config,
                           profile=args.profile)
    except WireshaperError as exc:
        return _fail(str(exc))
    print(format_report(report))
    if args.json:
        print(report.to_json())
    if args.with_network:
        mbps = _network_reference(args, sets[-1], config)
        print(f"loopback tunnel reference: {mbps:.2f} MB/s wall throughput")
    return 0


def _network_reference(args, cset: ConstraintSet, shaper: ShaperConfig) -> float:
    """Push the same stream through a real loopback tunnel, for context."""
    import random
    import time

    from .proxy import Endpoint

    data = random.Random(args.seed).randbytes(args.size)

    async def run() -> float:
        sink_done = asyncio.Event()
        received = bytearray()

        async def sink(reader, writer):
            while True:
                chunk = await reader.read(65536)
                if not chunk:
                    break
                received.extend(chunk)
            sink_done.set()
            writer.close()

        sink_server = await asyncio.start_server(sink, "127.0.0.1", 0)
        sink_port = sink_server.sockets[0].getsockname()[1]
        server = Endpoint(ProxyConfig(
            role=Role.SERVER, listen=("127.0.0.1", 0),
            peer=("127.0.0.1", sink_port), constraints_in=cset, shaper=shaper))
        await server.start()
        client = Endpoint(ProxyConfig(
            role=Role.CLIENT, listen=("127.0.0.1", 0),
            peer=server.bound_address, constraints_out=cset, shaper=shaper))
        await client.start()
        start = time.perf_counter()
        reader, writer = await asyncio.open_connection(*client.bound_address)
        for offset in range(0, len(data), 65536):
            writer.write(data[offset:offset + 65536])
            await writer.drain()
        writer.write_eof()
        await sink_done.wait()
        elapsed = time.perf_counter() - start
        writer.close()
        await client.stop()
        await server.stop()
        sink_server.close()
        await sink_server.wait_closed()
        if bytes(received) != data:
            raise WireshaperError("loopback tunnel corrupted the stream")
        return len(data) / elapsed / 1e6

    return asyncio.run(run())


def cmd_detect(args) -> int:
    try:
        with open(args.rules, "r", encoding="utf-8") as fh:
            rules = parse_rules(fh.read())
        frames = load_flow(args.frames)
    except (ConfigError, WireshaperError, OSError) as exc:
        return _fail(str(exc))
    verdict = inspect_flow(frames, rules)
    print(f"frames: {len(frames)}")
    print(f"flagged: {verdict.flagged}")
    if verdict.flagged:
        print(f"first flagged ordinal: {verdict.first_flagged_ordinal}")
        print(f"triggered rules: {list(verdict.triggered_rules)}")
    outcomes: dict[str, int] = {}
    for p in verdict.per_packet:
        outcomes[p.outcome.value] = outcomes.get(p.outcome.value, 0) + 1
    print("per-packet outcomes:", ", ".join(
        f"{name}={count}" for name, count in sorted(outcomes.items())) or "none")
    return 0


def cmd_check_config(args) -> int:
    checked = 0
    for path in args.constraints or []:
        try:
            load_shaping_document(path)
        except (ConfigError, OSError) as exc:
            return _fail(f"{path}: {exc}")
        checked += 1
    if args.timing:
        try:
            load_timing(args.timing)
        except (ConfigError, OSError) as exc:
            return _fail(f"{args.timing}: {exc}")
        checked += 1
    if args.rules:
        try:
            with open(args.rules, "r", encoding="utf-8") as fh:
                parse_rules(fh.read())
        except (ConfigError, OSError) as exc:
            return _fail(f"{args.rules}: {exc}")
        checked += 1
    if not checked:
        return _fail("nothing to check: pass --constraints, --timing, "
                     "and/or --rules")
    print(f"ok: {checked} file(s) valid")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    host, port = parse_address(args.listen)
    uvicorn.run(create_app(), host=host, port=port,
                log_level=os.environ.get("WIRESHAPER_LOG", "warning").lower()
                .replace("warn", "warning"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wireshaper",
        description="Constraint-driven traffic-shaping TCP tunnel")
    parser.add_argument("--version", action="version",
                        version=f"wireshaper {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_endpoint_args(p, peer_flag: str, peer_help: str):
        p.add_argument("--listen", required=True, help="host:port to accept on")
        p.add_argument(peer_flag, required=True, help=peer_help)
        p.add_argument("--constraints",
                       help="constraint file applied to both directions")
        p.add_argument("--constraints-out",
                       help="constraint file for the client->server direction")
        p.add_argument("--constraints-in",
                       help="constraint file for the server->client direction")
        p.add_argument("--timing", help="timing policy file")
        p.add_argument("--stats", type=float, metavar="SECONDS",
                       help="log per-connection counters every SECONDS")
        p.add_argument("--capture-frames", metavar="PATH",
                       help="append emitted wire frames to a capture file")

    client = sub.add_parser("client", help="run the client-side endpoint")
    add_endpoint_args(client, "--peer", "server endpoint host:port")
    client.set_defaults(func=lambda a: cmd_endpoint(a, Role.CLIENT))

    server = sub.add_parser("server", help="run the server-side endpoint")
    add_endpoint_args(server, "--forward", "destination host:port")
    server.set_defaults(func=lambda a: cmd_endpoint(a, Role.SERVER))

    bench = sub.add_parser("bench", help="measure shaping overhead")
    bench.add_argument("--size", type=int, default=DEFAULT_BENCH_STREAM_SIZE,
                       help="stream size in bytes (default 16 MiB)")
    bench.add_argument("--seed", type=int, default=DEFAULT_BENCH_SEED)
    bench.add_argument("--constraints", action="append", metavar="PATH",
                       help="constraint file; repeat for k=1..n sets "
                            "(an empty baseline is always prepended)")
    bench.add_argument("--frame-len", type=int,
                       help="override the bench frame length")
    bench.add_argument("--profile", action="store_true",
                       help="split time into buffer, search, encode phases")
    bench.add_argument("--json", action="store_true",
                       help="also print the report as JSON")
    bench.add_argument("--with-network", action="store_true",
                       help="also measure a real loopback tunnel for context")
    bench.set_defaults(func=cmd_bench)

    detect = sub.add_parser("detect", help="run detector rules over a flow")
    detect.add_argument("--rules", required=True, metavar="PATH")
    detect.add_argument("--frames", required=True, metavar="PATH",
                        help="capture file or directory of frame files")
    detect.set_defaults(func=cmd_detect)

    check = sub.add_parser("check-config", help="validate configuration files")
    check.add_argument("--constraints", action="append", metavar="PATH")
    check.add_argument("--timing", metavar="PATH")
    check.add_argument("--rules", metavar="PATH")
    check.set_defaults(func=cmd_check_config)

    serve = sub.add_parser("serve", help="run the HTTP control-plane API")
    serve.add_argument("--listen", default="127.0.0.1:8787",
                       help="host:port for the API (default 127.0.0.1:8787)")
    serve.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
