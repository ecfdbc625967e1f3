"""Lossless wire format between tunnel peers.

Each frame is::

    [outer_len u16 BE][payload_len u16 BE][payload][padding]

``outer_len`` counts every byte after the outer length field (so the
total on-wire size is ``outer_len + 2``), and ``payload_len`` counts the
original payload bytes. Padding length is therefore derivable as
``outer_len - 2 - payload_len`` and the receiver can strip it without
ever interpreting padding contents.
"""

from __future__ import annotations

import struct

from .errors import EmptyPayloadError, FrameTooLargeError, MalformedFrameError

HEADER_LEN = 4  # outer_len + payload_len, two u16 fields
_FIELD_MAX = 0xFFFF

DEFAULT_MAX_FRAME_LEN = 1400


def payload_capacity(max_frame_len: int) -> int:
    """Largest payload a frame of at most max_frame_len bytes can carry."""
    return max_frame_len - HEADER_LEN


def encode_frame(payload: bytes, padding: bytes = b"",
                 max_frame_len: int = DEFAULT_MAX_FRAME_LEN) -> bytes:
    """Encode one frame; deterministic function of (payload, padding)."""
    if len(payload) == 0:
        raise EmptyPayloadError("data frames require at least 1 payload byte")
    if len(payload) > _FIELD_MAX:
        raise FrameTooLargeError(
            f"payload of {len(payload)} bytes exceeds the 16-bit length field")
    outer_len = 2 + len(payload) + len(padding)
    if outer_len > _FIELD_MAX:
        raise FrameTooLargeError(
            f"outer length {outer_len} exceeds the 16-bit length field")
    total = 2 + outer_len
    if total > max_frame_len:
        raise FrameTooLargeError(
            f"frame of {total} bytes exceeds max_frame_len {max_frame_len}")
    return struct.pack(">HH", outer_len, len(payload)) + payload + padding


def decode_frames(data: bytes) -> tuple[list[bytes], bytes]:
    """Greedily parse complete frames from the front of a byte stream.

    Returns (payloads, residual) where residual is the unconsumed suffix
    (a partial trailing frame). Raises MalformedFrameError on a frame
    whose lengths are inconsistent — that signals stream desync and the
    connection must be torn down.
    """
    payloads: list[bytes] = []
    view = memoryview(data)
    offset = 0
    n = len(data)
    while True:
        if n - offset < 2:
            break
        outer_len = (view[offset] << 8) | view[offset + 1]
        if outer_len < 2:
            raise MalformedFrameError(
                f"outer length {outer_len} cannot hold the payload length field")
        if n - offset < 4:
            break
        payload_len = (view[offset + 2] << 8) | view[offset + 3]
        if payload_len == 0:
            raise MalformedFrameError("zero payload length")
        if payload_len + 2 > outer_len:
            raise MalformedFrameError(
                f"payload length {payload_len} exceeds outer length {outer_len} - 2")
        total = 2 + outer_len
        if n - offset < total:
            break
        payloads.append(bytes(view[offset + 4:offset + 4 + payload_len]))
        offset += total
    return payloads, bytes(view[offset:])


class FrameDecoder:
    """Incremental decoder holding the partial-frame residual between feeds.

    Feeding a stream in arbitrary chunk splits yields the same payload
    sequence as decoding the whole stream at once.
    """

    def __init__(self):
        self._residual = b""

    @property
    def residual(self) -> bytes:
        return self._residual

    def feed(self, chunk: bytes) -> list[bytes]:
        payloads, self._residual = decode_frames(self._residual + chunk)
        return payloads
