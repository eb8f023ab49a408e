"""Twin-link wire protocol: newline-delimited JSON messages over a stream
socket, one self-contained message per line.

Message lines and field names are part of the external contract:

    {"type":"cmd_vel","v":0.0,"w":0.0}
    {"type":"scan","pose":{"x":..,"y":..,"theta":..},"ranges":[..],
     "angle_min":..,"angle_max":..,"max_range":..}      null = no return
    {"type":"status","event":"none|goal|collision|timeout",
     "pose":{..},"goal":{"x":..,"y":..}}
    {"type":"pause"}  {"type":"resume"}  {"type":"bye"}
"""

from __future__ import annotations

import json
import math
import socket
from dataclasses import dataclass
from typing import Union

import numpy as np

from .lidarsim import LaserScan, ScanParams
from .worldsim import Pose, StepEvent

MAX_LINE_BYTES = 1 << 20  # reject anything longer, framing is line-based


class ProtocolError(Exception):
    """Malformed or oversized wire data; carries the offending bytes."""

    def __init__(self, message: str, offending: bytes = b""):
        super().__init__(message)
        self.offending = offending


@dataclass(frozen=True)
class CmdVel:
    v: float
    w: float


@dataclass(frozen=True)
class ScanMsg:
    pose: Pose
    ranges: tuple  # floats with None for "no return"
    angle_min: float
    angle_max: float
    max_range: float

    @classmethod
    def from_scan(cls, scan: LaserScan, pose: Pose) -> "ScanMsg":
        ranges = tuple(float(r) if math.isfinite(r) else None for r in scan.ranges)
        p = scan.params
        return cls(pose=pose, ranges=ranges, angle_min=p.angle_min,
                   angle_max=p.angle_max, max_range=p.max_range)

    def to_scan(self) -> LaserScan:
        params = ScanParams(
            n_beams=len(self.ranges),
            angle_min=self.angle_min,
            angle_max=self.angle_max,
            max_range=self.max_range,
        )
        values = np.array([math.inf if r is None else r for r in self.ranges])
        return LaserScan(ranges=values, params=params)


@dataclass(frozen=True)
class StatusMsg:
    event: StepEvent
    pose: Pose
    goal: tuple[float, float]


@dataclass(frozen=True)
class PauseMsg:
    pass


@dataclass(frozen=True)
class ResumeMsg:
    pass


@dataclass(frozen=True)
class ByeMsg:
    pass


TwinMessage = Union[CmdVel, ScanMsg, StatusMsg, PauseMsg, ResumeMsg, ByeMsg]


def _pose_dict(p: Pose) -> dict:
    return {"x": p.x, "y": p.y, "theta": p.theta}


def _pose_from(d) -> Pose:
    try:
        return Pose(float(d["x"]), float(d["y"]), float(d["theta"]))
    except (TypeError, KeyError) as exc:
        raise ProtocolError(f"bad pose object: {d!r}") from exc


def encode_message(msg: TwinMessage) -> bytes:
    """One JSON line, newline-terminated."""
    if isinstance(msg, CmdVel):
        obj = {"type": "cmd_vel", "v": msg.v, "w": msg.w}
    elif isinstance(msg, ScanMsg):
        obj = {
            "type": "scan",
            "pose": _pose_dict(msg.pose),
            "ranges": list(msg.ranges),
            "angle_min": msg.angle_min,
            "angle_max": msg.angle_max,
            "max_range": msg.max_range,
        }
    elif isinstance(msg, StatusMsg):
        obj = {
            "type": "status",
            "event": msg.event.value,
            "pose": _pose_dict(msg.pose),
            "goal": {"x": msg.goal[0], "y": msg.goal[1]},
        }
    elif isinstance(msg, PauseMsg):
        obj = {"type": "pause"}
    elif isinstance(msg, ResumeMsg):
        obj = {"type": "resume"}
    elif isinstance(msg, ByeMsg):
        obj = {"type": "bye"}
    else:
        raise TypeError(f"not a twin message: {msg!r}")
    line = json.dumps(obj, separators=(",", ":")).encode("utf-8") + b"\n"
    if len(line) > MAX_LINE_BYTES:
        raise ProtocolError(f"encoded message exceeds {MAX_LINE_BYTES} bytes")
    return line


def decode_message(data: bytes) -> TwinMessage:
    """Parse one line (trailing newline optional) into a message."""
    if len(data) > MAX_LINE_BYTES:
        raise ProtocolError(f"line exceeds {MAX_LINE_BYTES} bytes", data[:256])
    line = data.rstrip(b"\n")
    try:
        obj = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed JSON line: {exc}", line) from exc
    if not isinstance(obj, dict) or "type" not in obj:
        raise ProtocolError("message is not a tagged object", line)
    tag = obj["type"]
    try:
        if tag == "cmd_vel":
            return CmdVel(v=float(obj["v"]), w=float(obj["w"]))
        if tag == "scan":
            ranges = tuple(None if r is None else float(r) for r in obj["ranges"])
            return ScanMsg(
                pose=_pose_from(obj["pose"]),
                ranges=ranges,
                angle_min=float(obj["angle_min"]),
                angle_max=float(obj["angle_max"]),
                max_range=float(obj["max_range"]),
            )
        if tag == "status":
            try:
                event = StepEvent(obj["event"])
            except ValueError as exc:
                raise ProtocolError(f"unknown status event {obj['event']!r}", line) from exc
            return StatusMsg(
                event=event,
                pose=_pose_from(obj["pose"]),
                goal=(float(obj["goal"]["x"]), float(obj["goal"]["y"])),
            )
        if tag == "pause":
            return PauseMsg()
        if tag == "resume":
            return ResumeMsg()
        if tag == "bye":
            return ByeMsg()
    except ProtocolError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise ProtocolError(f"bad fields for {tag!r}: {exc}", line) from exc
    raise ProtocolError(f"unknown message tag {tag!r}", line)


class MessageStream:
    """Blocking line-framed message I/O over a connected socket."""

    def __init__(self, sock: socket.socket, timeout: float | None = None):
        self.sock = sock
        if timeout is not None:
            sock.settimeout(timeout)
        self._buf = b""

    def send(self, msg: TwinMessage) -> None:
        self.sock.sendall(encode_message(msg))

    def recv(self) -> TwinMessage | None:
        """Next message, or None on clean EOF before any bytes."""
        while b"\n" not in self._buf:
            if len(self._buf) > MAX_LINE_BYTES:
                raise ProtocolError("line exceeds maximum length", self._buf[:256])
            chunk = self.sock.recv(65536)
            if not chunk:
                if self._buf:
                    raise ProtocolError("connection closed mid-line", self._buf[:256])
                return None
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return decode_message(line)

    def close(self) -> None:
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
