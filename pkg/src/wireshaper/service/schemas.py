"""Pydantic request/response models for the control-plane API."""

from __future__ import annotations

import base64

from pydantic import BaseModel, Field

from ..bench import BenchReport
from ..constraints import Constraint, ConstraintSet, Mode, PacketTarget
from ..detector import DetectorRule, FlowVerdict, RuleAction
from ..proxy import ConnectionStats
from ..shaping import ShaperConfig
from ..timing import TimingPolicy


class ConstraintModel(BaseModel):
    function: str
    mode: str
    value: float
    target: str = "all"
    type: str | None = None

    def to_constraint(self) -> Constraint:
        return Constraint(
            function=self.function,
            mode=Mode.from_text(self.mode),
            value=self.value,
            target=PacketTarget.from_text(self.target),
            type_hint=self.type,
        )

    @classmethod
    def from_constraint(cls, c: Constraint) -> "ConstraintModel":
        return cls(function=c.function, mode=c.mode.value, value=c.value,
                   target=c.target.to_text(), type=c.type_hint)


class ConstraintSetModel(BaseModel):
    name: str | None = None
    constraints: list[ConstraintModel] = Field(default_factory=list)

    def to_set(self) -> ConstraintSet:
        return ConstraintSet(tuple(c.to_constraint() for c in self.constraints),
                             name=self.name)


class TimingPolicyModel(BaseModel):
    min_gap_ms: float | None = None
    max_gap_ms: float | None = None
    fixed_interval_ms: float | None = None
    jitter_ms: float | None = None
    throughput_Bps: int | None = None
    bucket_capacity_B: int | None = None

    def to_policy(self) -> TimingPolicy:
        def ns(ms):
            return None if ms is None else round(ms * 1_000_000)
        return TimingPolicy(
            min_gap_ns=ns(self.min_gap_ms),
            max_gap_ns=ns(self.max_gap_ms),
            fixed_interval_ns=ns(self.fixed_interval_ms),
            jitter_ns=ns(self.jitter_ms),
            throughput_bps=self.throughput_Bps,
            bucket_capacity=self.bucket_capacity_B,
        )


class ShaperConfigModel(BaseModel):
    max_frame_len: int = 1400
    flush_period_ms: float = 20.0
    reduction_step: int = 1
    padding_budget: int = 65536
    max_padding_len: int = 256

    def to_config(self) -> ShaperConfig:
        return ShaperConfig(
            max_frame_len=self.max_frame_len,
            flush_period_ns=round(self.flush_period_ms * 1_000_000),
            reduction_step=self.reduction_step,
            padding_budget=self.padding_budget,
            max_padding_len=self.max_padding_len,
        )


class RuleModel(ConstraintModel):
    action: str

    def to_rule(self) -> DetectorRule:
        c = self.to_constraint()
        return DetectorRule(c.function, c.mode, c.value, c.target,
                            RuleAction.from_text(self.action))


class ConfigCheckRequest(BaseModel):
    """Raw configuration documents to validate (any subset)."""

    constraints: str | None = None
    timing: str | None = None
    rules: str | None = None


class ConfigIssue(BaseModel):
    source: str
    message: str
    line: int | None = None
    entry_index: int | None = None


class ConfigCheckResponse(BaseModel):
    ok: bool
    issues: list[ConfigIssue] = Field(default_factory=list)


class EvaluateRequest(BaseModel):
    frame_b64: str
    ordinal: int = 0
    constraints: ConstraintSetModel

    def frame_bytes(self) -> bytes:
        return base64.b64decode(self.frame_b64)


class EvaluateResponse(BaseModel):
    satisfied: bool
    violated: list[ConstraintModel]
    metrics: dict[str, float]


class DetectRequest(BaseModel):
    frames_b64: list[str]
    rules: list[RuleModel]

    def frames(self) -> list[bytes]:
        return [base64.b64decode(f) for f in self.frames_b64]


class PacketResultModel(BaseModel):
    ordinal: int
    outcome: str
    rule_index: int | None = None


class VerdictResponse(BaseModel):
    flagged: bool
    first_flagged_ordinal: int | None
    triggered_rules: list[int]
    per_packet: list[PacketResultModel]

    @classmethod
    def from_verdict(cls, verdict: FlowVerdict) -> "VerdictResponse":
        return cls(
            flagged=verdict.flagged,
            first_flagged_ordinal=verdict.first_flagged_ordinal,
            triggered_rules=list(verdict.triggered_rules),
            per_packet=[PacketResultModel(ordinal=p.ordinal,
                                          outcome=p.outcome.value,
                                          rule_index=p.rule_index)
                        for p in verdict.per_packet],
        )


class BenchRequest(BaseModel):
    size_bytes: int = Field(default=16 * 1024 * 1024, ge=1024 * 1024)
    seed: int = 42
    constraint_sets: list[ConstraintSetModel] | None = None
    shaper: ShaperConfigModel | None = None
    repeats: int = Field(default=3, ge=1, le=9)


class BenchRunModel(BaseModel):
    constraint_count: int
    set_name: str
    throughput_bps: float
    overhead_percent: float | None
    incremental_overhead_percent: float | None
    wall_seconds: float
    frames: int
    padding_bytes: int
    candidates: int
    failed: bool
    failure: str | None = None


class BenchResponse(BaseModel):
    stream_size: int
    seed: int
    wall_seconds: float
    baseline_throughput_bps: float
    padding_bytes_total: int
    shaping_failures: int
    runs: list[BenchRunModel]

    @classmethod
    def from_report(cls, report: BenchReport) -> "BenchResponse":
        d = report.to_dict()
        d["runs"] = [BenchRunModel(**{k: v for k, v in run.items()
                                      if k in BenchRunModel.model_fields})
                     for run in d["runs"]]
        return cls(**d)


class TunnelCreateRequest(BaseModel):
    role: str  # client | server
    listen: str = "127.0.0.1:0"
    peer: str  # tunnel peer for client, forward destination for server
    constraints_out: ConstraintSetModel = Field(default_factory=ConstraintSetModel)
    constraints_in: ConstraintSetModel = Field(default_factory=ConstraintSetModel)
    timing: TimingPolicyModel = Field(default_factory=TimingPolicyModel)
    shaper: ShaperConfigModel = Field(default_factory=ShaperConfigModel)


class TunnelStatsModel(BaseModel):
    connections_total: int
    connections_active: int
    shaping_failures: int
    plain_in: int
    plain_out: int
    frames_sent: int
    frames_received: int
    padding_bytes: int

    @classmethod
    def from_endpoint(cls, endpoint) -> "TunnelStatsModel":
        conns: list[ConnectionStats] = list(endpoint.connections.values())
        active = sum(1 for c in conns if c.state.value in ("open", "half-closed"))
        return cls(
            connections_total=endpoint.connections_total,
            connections_active=active,
            shaping_failures=endpoint.shaping_failures,
            plain_in=sum(c.plain_in for c in conns),
            plain_out=sum(c.plain_out for c in conns),
            frames_sent=sum(c.frames_sent for c in conns),
            frames_received=sum(c.frames_received for c in conns),
            padding_bytes=sum(c.shape.padding_bytes for c in conns),
        )


class TunnelInfo(BaseModel):
    id: int
    role: str
    listen: str
    peer: str
    stats: TunnelStatsModel


class FunctionInfo(BaseModel):
    name: str
    value_min: float
    value_max: float | None
