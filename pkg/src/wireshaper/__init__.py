"""wireshaper: constraint-driven real-time traffic shaping over TCP.

The core pieces:

* :mod:`wireshaper.constraints` — content-constraint definition and
  evaluation over candidate frame bytes.
* :mod:`wireshaper.framing` — the lossless wire format (the receiving
  peer strips padding exactly).
* :mod:`wireshaper.shaping` — buffering plus the two-phase budgeted
  search (length reduction, then incremental content padding).
* :mod:`wireshaper.timing` — release scheduling (gaps, fixed intervals,
  jitter, token-bucket throughput cap).
* :mod:`wireshaper.proxy` — asyncio TCP tunnel endpoints.
* :mod:`wireshaper.detector` — censor-rule simulator for evaluating
  shaped vs unshaped flows.
* :mod:`wireshaper.bench` — shaping-overhead benchmark harness.
* :mod:`wireshaper.service` — FastAPI control-plane wrapper.
"""

from .constraints import (
    Constraint,
    ConstraintSet,
    Mode,
    PacketTarget,
    check,
    check_all,
    eval_function,
    matches_target,
    parse_constraint_set,
    serialize_constraint_set,
)
from .detector import DetectorRule, FlowVerdict, RuleAction, inspect_flow, parse_rules
from .errors import WireshaperError
from .framing import FrameDecoder, decode_frames, encode_frame
from .proxy import Endpoint, ProxyConfig, Role, run_endpoint
from .shaping import ShapeBuffer, ShaperConfig, ShapeStats, synthesize_frame
from .timing import EmissionQueue, TimingPolicy, parse_timing_policy

__version__ = "0.1.0"

__all__ = [
    "Constraint",
    "ConstraintSet",
    "DetectorRule",
    "EmissionQueue",
    "Endpoint",
    "FlowVerdict",
    "FrameDecoder",
    "Mode",
    "PacketTarget",
    "ProxyConfig",
    "Role",
    "RuleAction",
    "ShapeBuffer",
    "ShaperConfig",
    "ShapeStats",
    "TimingPolicy",
    "WireshaperError",
    "check",
    "check_all",
    "decode_frames",
    "encode_frame",
    "eval_function",
    "inspect_flow",
    "matches_target",
    "parse_constraint_set",
    "parse_rules",
    "parse_timing_policy",
    "run_endpoint",
    "serialize_constraint_set",
    "synthesize_frame",
    "__version__",
]
