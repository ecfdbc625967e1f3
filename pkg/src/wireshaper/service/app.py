"""FastAPI control plane wrapping the core shaping package.

Exposes configuration validation, constraint evaluation, the detector,
the overhead bench, and tunnel endpoint lifecycle management. The data
plane stays raw TCP (handled by the Endpoint instances this service
starts); HTTP is only the control surface.
"""

from __future__ import annotations

import asyncio
import itertools
import logging
import math
from contextlib import asynccontextmanager
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException
from fastapi.concurrency import run_in_threadpool

from .. import __version__
from ..bench import default_bench_sets, run_bench
from ..constraints import (
    FUNCTION_RANGES,
    check_all,
    eval_function,
    parse_constraint_set,
)
from ..detector import inspect_flow, parse_rules
from ..errors import (
    BindFailureError,
    ConfigError,
    EmptyInputError,
    WireshaperError,
)
from ..proxy import Endpoint, ProxyConfig, Role, parse_address
from ..timing import parse_timing_policy
from . import schemas

logger = logging.getLogger(__name__)


@dataclass
class _Tunnel:
    tunnel_id: int
    request: schemas.TunnelCreateRequest
    endpoint: Endpoint

    def info(self) -> schemas.TunnelInfo:
        host, port = self.endpoint.bound_address
        return schemas.TunnelInfo(
            id=self.tunnel_id,
            role=self.request.role,
            listen=f"{host}:{port}",
            peer=self.request.peer,
            stats=schemas.TunnelStatsModel.from_endpoint(self.endpoint),
        )


class TunnelRegistry:
    def __init__(self):
        self._tunnels: dict[int, _Tunnel] = {}
        self._ids = itertools.count(1)

    async def create(self, request: schemas.TunnelCreateRequest) -> _Tunnel:
        try:
            role = Role(request.role.lower())
        except ValueError:
            raise HTTPException(422, f"role must be client or server, "
                                     f"got {request.role!r}") from None
        try:
            config = ProxyConfig(
                role=role,
                listen=parse_address(request.listen),
                peer=parse_address(request.peer),
                constraints_out=request.constraints_out.to_set(),
                constraints_in=request.constraints_in.to_set(),
                timing=request.timing.to_policy(),
                shaper=request.shaper.to_config(),
            )
        except (ValueError, WireshaperError) as exc:
            raise HTTPException(422, str(exc)) from None
        endpoint = Endpoint(config)
        try:
            await endpoint.start()
        except BindFailureError as exc:
            raise HTTPException(409, str(exc)) from None
        tunnel = _Tunnel(next(self._ids), request, endpoint)
        self._tunnels[tunnel.tunnel_id] = tunnel
        logger.info("tunnel %d (%s) listening on %s:%s", tunnel.tunnel_id,
                    request.role, *endpoint.bound_address)
        return tunnel

    def get(self, tunnel_id: int) -> _Tunnel:
        tunnel = self._tunnels.get(tunnel_id)
        if tunnel is None:
            raise HTTPException(404, f"no tunnel {tunnel_id}")
        return tunnel

    def list(self) -> list[_Tunnel]:
        return list(self._tunnels.values())

    async def delete(self, tunnel_id: int) -> None:
        tunnel = self.get(tunnel_id)
        del self._tunnels[tunnel_id]
        await tunnel.endpoint.stop()

    async def shutdown(self) -> None:
        for tunnel_id in list(self._tunnels):
            await self.delete(tunnel_id)


def create_app() -> FastAPI:
    registry = TunnelRegistry()

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        await registry.shutdown()

    app = FastAPI(title="wireshaper control plane", version=__version__,
                  lifespan=lifespan)
    app.state.registry = registry

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.get("/constraint-functions",
             response_model=list[schemas.FunctionInfo])
    def constraint_functions():
        return [
            schemas.FunctionInfo(
                name=name, value_min=lo,
                value_max=None if math.isinf(hi) else hi)
            for name, (lo, hi) in FUNCTION_RANGES.items()
        ]

    @app.post("/config/check", response_model=schemas.ConfigCheckResponse)
    def config_check(request: schemas.ConfigCheckRequest):
        issues: list[schemas.ConfigIssue] = []
        checks = (("constraints", request.constraints, parse_constraint_set),
                  ("timing", request.timing, parse_timing_policy),
                  ("rules", request.rules, parse_rules))
        for source, text, parser in checks:
            if text is None:
                continue
            try:
                parser(text)
            except ConfigError as exc:
                issues.append(schemas.ConfigIssue(
                    source=source, message=str(exc), line=exc.line,
                    entry_index=exc.entry_index))
        return schemas.ConfigCheckResponse(ok=not issues, issues=issues)

    @app.post("/constraints/evaluate", response_model=schemas.EvaluateResponse)
    def constraints_evaluate(request: schemas.EvaluateRequest):
        frame = request.frame_bytes()
        try:
            cset = request.constraints.to_set()
        except ConfigError as exc:
            raise HTTPException(422, str(exc)) from None
        try:
            ok, violated = check_all(cset, frame, request.ordinal)
            metrics = {name: eval_function(name, frame)
                       for name in FUNCTION_RANGES}
        except EmptyInputError as exc:
            raise HTTPException(422, str(exc)) from None
        return schemas.EvaluateResponse(
            satisfied=ok,
            violated=[schemas.ConstraintModel.from_constraint(c)
                      for c in violated],
            metrics=metrics,
        )

    @app.post("/detect", response_model=schemas.VerdictResponse)
    def detect(request: schemas.DetectRequest):
        try:
            rules = [r.to_rule() for r in request.rules]
        except ConfigError as exc:
            raise HTTPException(422, str(exc)) from None
        verdict = inspect_flow(request.frames(), rules)
        return schemas.VerdictResponse.from_verdict(verdict)

    @app.post("/bench", response_model=schemas.BenchResponse)
    async def bench(request: schemas.BenchRequest):
        if request.constraint_sets is None:
            sets = default_bench_sets()
        else:
            try:
                sets = [m.to_set() for m in request.constraint_sets]
            except ConfigError as exc:
                raise HTTPException(422, str(exc)) from None
        config = request.shaper.to_config() if request.shaper else None
        report = await run_in_threadpool(
            run_bench, request.size_bytes, sets, request.seed, config,
            repeats=request.repeats)
        return schemas.BenchResponse.from_report(report)

    @app.post("/tunnels", response_model=schemas.TunnelInfo, status_code=201)
    async def create_tunnel(request: schemas.TunnelCreateRequest):
        tunnel = await registry.create(request)
        return tunnel.info()

    @app.get("/tunnels", response_model=list[schemas.TunnelInfo])
    def list_tunnels():
        return [t.info() for t in registry.list()]

    @app.get("/tunnels/{tunnel_id}", response_model=schemas.TunnelInfo)
    def get_tunnel(tunnel_id: int):
        return registry.get(tunnel_id).info()

    @app.delete("/tunnels/{tunnel_id}", status_code=204)
    async def delete_tunnel(tunnel_id: int):
        await registry.delete(tunnel_id)

    return app
