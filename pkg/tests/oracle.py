"""Independent reference implementations used to cross-check the package.

Everything here is deliberately written from scratch against the wire
and search contracts (plain Counter/math, literal enumeration), not by
calling into wireshaper internals, so tests compare two independent
derivations of the same answers.
"""

import math
from collections import Counter

EPS = 1e-9


def entropy(data: bytes) -> float:
    n = len(data)
    return -sum((c / n) * math.log2(c / n) for c in Counter(data).values())


def printable_fraction(data: bytes) -> float:
    return sum(1 for b in data if 0x20 <= b <= 0x7E) / len(data)


def hist_max_fraction(data: bytes) -> float:
    return max(Counter(data).values()) / len(data)


def metric(function: str, data: bytes) -> float:
    if function == "frame_length_bytes":
        return float(len(data))
    if function == "entropy_bits_per_byte":
        return entropy(data)
    if function == "printable_ascii_fraction":
        return printable_fraction(data)
    if function == "byte_histogram_max_fraction":
        return hist_max_fraction(data)
    raise AssertionError(function)


def compare(mode: str, m: float, value: float, exact: bool) -> bool:
    if mode == "eq":
        return m == value if exact else abs(m - value) <= EPS
    if mode == "neq":
        return m != value if exact else abs(m - value) > EPS
    if mode == "lt":
        return m < value
    if mode == "le":
        return m <= value
    if mode == "gt":
        return m > value
    if mode == "ge":
        return m >= value
    raise AssertionError(mode)


def target_matches(target, ordinal: int) -> bool:
    kind = target.kind.name
    if kind == "ALL":
        return True
    if kind == "INDEX":
        return ordinal == target.lo
    if kind == "RANGE":
        return target.lo <= ordinal <= target.hi
    if kind == "FIRST_N":
        return ordinal < target.hi
    raise AssertionError(kind)


def constraint_holds(c, frame: bytes, ordinal: int) -> bool:
    if not target_matches(c.target, ordinal):
        return True
    exact = c.function == "frame_length_bytes"
    return compare(c.mode.value, metric(c.function, frame), c.value, exact)


def encode(payload: bytes, padding: bytes) -> bytes:
    outer = 2 + len(payload) + len(padding)
    header = bytes([outer >> 8, outer & 0xFF,
                    len(payload) >> 8, len(payload) & 0xFF])
    return header + payload + padding


def decode_all(stream: bytes):
    """Strict reference decoder; returns (payloads, residual)."""
    payloads = []
    i = 0
    while True:
        if len(stream) - i < 4:
            break
        outer = (stream[i] << 8) | stream[i + 1]
        plen = (stream[i + 2] << 8) | stream[i + 3]
        assert outer >= 2 and plen >= 1 and plen + 2 <= outer
        if len(stream) - i < 2 + outer:
            break
        payloads.append(stream[i + 4:i + 4 + plen])
        i += 2 + outer
    return payloads, stream[i:]


def brute_force_shape(data: bytes, ordinal: int, constraints,
                      max_frame_len: int, reduction_step: int,
                      padding_budget: int, max_padding_len: int):
    """Literal enumeration in (phase, K, P, counter) order.

    Returns (consumed, frame, evals) on success or (None, None, evals)
    when the budget (or candidate space) exhausts first.
    """
    relevant = [c for c in constraints if target_matches(c.target, ordinal)]

    def ok(frame: bytes) -> bool:
        return all(
            compare(c.mode.value, metric(c.function, frame), c.value,
                    c.function == "frame_length_bytes")
            for c in relevant)

    k0 = len(data)
    evals = 0
    k = k0
    while k >= 1:
        frame = encode(data[:k], b"")
        evals += 1
        if ok(frame):
            return k, frame, evals
        if evals >= padding_budget:
            return None, None, evals
        k -= reduction_step

    capacity = max_frame_len - 4
    max_pad = min(max_padding_len, capacity - k0)
    for pad_len in range(1, max_pad + 1):
        for counter in range(256 ** pad_len):
            frame = encode(data[:k0], counter.to_bytes(pad_len, "big"))
            evals += 1
            if ok(frame):
                return k0, frame, evals
            if evals >= padding_budget:
                return None, None, evals
    return None, None, evals
