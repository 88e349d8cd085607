"""Wire protocol for external agents.

Frames are single-line JSON objects, newline-terminated, UTF-8; the
stream is self-delimiting because encoded frames never contain a raw
newline. Every frame carries a mandatory version field ``v`` (currently
1); mismatches are rejected. One request is in flight per connection at
a time, strictly ordered within an episode. Images ship base64-inline so
remote agents need no shared filesystem.

Frame types:

    request  {v, type:"request", episode_id, step, image_png_b64,
              prior_response|null, feedback|null, prompt_template_id}
    reply    {v, type:"reply", episode_id, step, raw_text, latency_ms}
    error    {v, type:"error", reason, episode_id?, step?}

An ``error`` frame from the agent is surfaced to the navigation loop as
unparseable text (so it counts toward the parse-strike limit rather
than killing the episode); transport-level failures -- timeout, broken
stream, malformed frame -- raise :class:`TransportError`, which the loop
maps to an AGENT_ERROR outcome.
"""

from __future__ import annotations

import base64
import json
import os
import selectors
import shlex
import socket
import subprocess
import time

from .errors import TransportError
from .navloop import AgentTurn

WIRE_VERSION = 1
DEFAULT_TIMEOUT_S = 120.0

_REQUIRED_FIELDS = {
    "request": ("episode_id", "step", "image_png_b64", "prompt_template_id"),
    "reply": ("episode_id", "step", "raw_text", "latency_ms"),
    "error": ("reason",),
}


class FrameError(TransportError):
    """A line that is not a well-formed frame."""


def encode_frame(frame: dict) -> bytes:
    """Validate and encode one frame as a newline-terminated JSON line."""
    validate_frame(frame)
    return json.dumps(frame, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_frame(line: str | bytes) -> dict:
    """Parse and validate one frame line; raises FrameError otherwise."""
    if isinstance(line, (bytes, bytearray)):
        try:
            line = bytes(line).decode("utf-8")
        except UnicodeDecodeError as e:
            raise FrameError(f"frame is not valid UTF-8: {e}") from e
    try:
        frame = json.loads(line)
    except json.JSONDecodeError as e:
        raise FrameError(f"frame is not valid JSON: {e}") from e
    validate_frame(frame)
    return frame


def validate_frame(frame) -> None:
    if not isinstance(frame, dict):
        raise FrameError(f"frame must be a JSON object, got {type(frame).__name__}")
    if "v" not in frame:
        raise FrameError("frame missing mandatory version field 'v'")
    if frame["v"] != WIRE_VERSION:
        raise FrameError(
            f"unsupported frame version {frame['v']!r} (expected {WIRE_VERSION})"
        )
    frame_type = frame.get("type")
    if frame_type not in _REQUIRED_FIELDS:
        raise FrameError(f"unknown frame type {frame_type!r}")
    for name in _REQUIRED_FIELDS[frame_type]:
        if name not in frame:
            raise FrameError(f"{frame_type} frame missing field {name!r}")
    if frame_type == "reply" and not frame["raw_text"]:
        raise FrameError("reply frame has empty raw_text")
    if frame_type == "request" and not isinstance(frame["step"], int):
        raise FrameError("request step must be an integer")


def build_request_frame(turn: AgentTurn) -> dict:
    return {
        "v": WIRE_VERSION,
        "type": "request",
        "episode_id": turn.episode_id,
        "step": turn.step,
        "image_png_b64": base64.b64encode(turn.image.to_png_bytes()).decode("ascii"),
        "prior_response": turn.prior_response,
        "feedback": turn.feedback,
        "prompt_template_id": turn.prompt_template_id,
    }


class _LineChannel:
    """Newline-delimited byte channel with deadline-based reads."""

    def __init__(self):
        self._buffer = b""

    def _read_chunk(self, deadline: float) -> bytes | None:
        """One read attempt: None = no data yet, b'' = EOF, else data."""
        raise NotImplementedError

    def _write(self, data: bytes) -> None:
        raise NotImplementedError

    def send_line(self, data: bytes) -> None:
        self._write(data)

    def recv_line(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        while b"\n" not in self._buffer:
            if time.monotonic() >= deadline:
                raise TransportError(f"timed out after {timeout:.0f}s waiting for a frame")
            chunk = self._read_chunk(deadline)
            if chunk is None:
                continue
            if chunk == b"":
                raise TransportError("agent stream closed mid-conversation")
            self._buffer += chunk
        line, self._buffer = self._buffer.split(b"\n", 1)
        return line


class SubprocessChannel(_LineChannel):
    def __init__(self, cmd: list[str] | str):
        super().__init__()
        if isinstance(cmd, str):
            cmd = shlex.split(cmd)
        self.cmd = cmd
        try:
            self.proc = subprocess.Popen(
                cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE
            )
        except OSError as e:
            raise TransportError(f"cannot launch agent {cmd!r}: {e}") from e
        self._selector = selectors.DefaultSelector()
        self._selector.register(self.proc.stdout, selectors.EVENT_READ)

    def _write(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, ValueError) as e:
            raise TransportError(f"agent stdin closed: {e}") from e

    def _read_chunk(self, deadline: float) -> bytes | None:
        remaining = max(0.0, deadline - time.monotonic())
        if not self._selector.select(timeout=remaining):
            return None
        return os.read(self.proc.stdout.fileno(), 65536)

    def close(self) -> None:
        self._selector.close()
        if self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            if stream:
                stream.close()


class TcpChannel(_LineChannel):
    def __init__(self, host: str, port: int, connect_timeout: float = 10.0):
        super().__init__()
        try:
            self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as e:
            raise TransportError(f"cannot connect to {host}:{port}: {e}") from e

    def _write(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as e:
            raise TransportError(f"socket send failed: {e}") from e

    def _read_chunk(self, deadline: float) -> bytes | None:
        remaining = max(0.001, deadline - time.monotonic())
        self.sock.settimeout(remaining)
        try:
            return self.sock.recv(65536)
        except socket.timeout:
            return None
        except OSError as e:
            raise TransportError(f"socket recv failed: {e}") from e

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class WireAgent:
    """navloop-compatible agent backed by a framed channel."""

    def __init__(self, channel: _LineChannel, timeout: float = DEFAULT_TIMEOUT_S):
        self.channel = channel
        self.timeout = timeout

    def respond(self, turn: AgentTurn) -> str:
        request = build_request_frame(turn)
        self.channel.send_line(encode_frame(request))
        line = self.channel.recv_line(self.timeout)
        try:
            frame = decode_frame(line)
        except FrameError as e:
            raise TransportError(f"malformed reply frame: {e}") from e
        if frame["type"] == "error":
            # app-level failure: feed to the parser so the strike rule applies
            return f"[agent-error] {frame['reason']}"
        if frame["type"] != "reply":
            raise TransportError(f"unexpected frame type {frame['type']!r} in reply")
        if frame["episode_id"] != turn.episode_id or frame["step"] != turn.step:
            raise TransportError(
                f"out-of-order reply: got ({frame['episode_id']}, {frame['step']}), "
                f"expected ({turn.episode_id}, {turn.step})"
            )
        return frame["raw_text"]

    def close(self) -> None:
        close = getattr(self.channel, "close", None)
        if close:
            close()

    def __enter__(self) -> "WireAgent":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def serve_subprocess(agent_cmd, timeout: float = DEFAULT_TIMEOUT_S) -> WireAgent:
    """Launch an agent subprocess speaking frames over its stdio."""
    return WireAgent(SubprocessChannel(agent_cmd), timeout=timeout)


def connect_tcp(host: str, port: int, timeout: float = DEFAULT_TIMEOUT_S) -> WireAgent:
    """Connect to an agent serving frames over TCP."""
    return WireAgent(TcpChannel(host, port), timeout=timeout)
