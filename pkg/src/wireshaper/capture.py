"""Frame capture files: how shaped flows reach the detector.

Two input layouts are accepted:

* a length-prefixed frames file (``[u32 BE length][frame bytes]``
  repeated), as written by the proxy's capture flag;
* a directory of per-frame binary files, read in sorted name order.
"""

from __future__ import annotations

import os
import struct

from .errors import MalformedFrameError

_LEN = struct.Struct(">I")


class FrameCaptureWriter:
    """Appends length-prefixed frames to a capture file."""

    def __init__(self, path: str):
        self._fh = open(path, "ab")

    def write(self, frame: bytes) -> None:
        self._fh.write(_LEN.pack(len(frame)) + frame)

    def flush(self) -> None:
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "FrameCaptureWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def write_capture_file(path: str, frames: list[bytes]) -> None:
    with open(path, "wb") as fh:
        for frame in frames:
            fh.write(_LEN.pack(len(frame)) + frame)


def read_capture_file(path: str) -> list[bytes]:
    frames = []
    with open(path, "rb") as fh:
        data = fh.read()
    offset = 0
    while offset < len(data):
        if offset + 4 > len(data):
            raise MalformedFrameError("truncated length prefix in capture file")
        (length,) = _LEN.unpack_from(data, offset)
        offset += 4
        if offset + length > len(data):
            raise MalformedFrameError("truncated frame in capture file")
        frames.append(data[offset:offset + length])
        offset += length
    return frames


def read_frames_dir(path: str) -> list[bytes]:
    frames = []
    for name in sorted(os.listdir(path)):
        full = os.path.join(path, name)
        if os.path.isfile(full):
            with open(full, "rb") as fh:
                frames.append(fh.read())
    return frames


def load_flow(path: str) -> list[bytes]:
    """Read a flow from a capture file or a directory of per-frame files."""
    if os.path.isdir(path):
        return read_frames_dir(path)
    return read_capture_file(path)
