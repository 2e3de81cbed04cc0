"""Length-prefixed wire protocol for remote policy evaluation.

Frame: u32 big-endian length, u8 payload kind (0 control text, 1 binary
buffer), payload bytes; the length covers the kind byte plus payload.
Control payloads are ``key=value`` lines and always carry ``type``. An
EVAL_REQUEST control frame is followed by exactly one binary frame holding a
TransformBatch tensor; EVAL_REPLY is followed by one ValueMapBatch tensor.
Tensors use the dataset buffer layout (see tensorio).

Protocol version 1. The policy provider is the accepting side: a connecting
benchmark sends HELLO, receives HELLO_ACK, then loops EVAL_REQUEST /
EVAL_REPLY in lockstep.
"""
from __future__ import annotations

import socket
import socketserver
import struct
import threading

import numpy as np

from .config import PolicyConfig
from .policy import (Mode, TransformBatch, ValueFunction, ValueMapBatch,
                     make_value_function, slice_params)
from .tensorio import read_tensor, write_tensor

PROTOCOL_VERSION = 1
MAX_FRAME = 256 * 1024 * 1024
KIND_CONTROL = 0
KIND_BINARY = 1


class ProtocolError(RuntimeError):
    pass


def write_frame(wfile, kind: int, payload: bytes):
    if len(payload) + 1 > MAX_FRAME:
        raise ProtocolError(f"frame too large: {len(payload) + 1} bytes")
    wfile.write(struct.pack(">I", len(payload) + 1) + bytes([kind]) + payload)
    wfile.flush()


def read_frame(rfile) -> tuple[int, bytes]:
    head = rfile.read(4)
    if len(head) == 0:
        raise EOFError("connection closed")
    if len(head) < 4:
        raise ProtocolError("truncated frame header")
    length = struct.unpack(">I", head)[0]
    if length < 1:
        raise ProtocolError("frame length must cover the kind byte")
    if length > MAX_FRAME:
        raise ProtocolError(f"frame too large: {length} bytes")
    body = rfile.read(length)
    if len(body) < length:
        raise ProtocolError("truncated frame body")
    return body[0], body[1:]


def dump_message(msg: dict) -> bytes:
    lines = []
    for key, value in msg.items():
        text = str(value).replace("\n", " ")
        lines.append(f"{key}={text}")
    return "\n".join(lines).encode("utf-8")


def parse_message(payload: bytes) -> dict:
    msg = {}
    try:
        text = payload.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ProtocolError(f"control frame is not text: {exc}") from exc
    for line in text.splitlines():
        if not line.strip():
            continue
        if "=" not in line:
            raise ProtocolError(f"bad control line: {line!r}")
        key, value = line.split("=", 1)
        msg[key.strip()] = value.strip()
    if "type" not in msg:
        raise ProtocolError("control frame lacks a type")
    return msg


def send_message(wfile, msg: dict):
    write_frame(wfile, KIND_CONTROL, dump_message(msg))


def recv_message(rfile) -> dict:
    kind, payload = read_frame(rfile)
    if kind != KIND_CONTROL:
        raise ProtocolError("expected a control frame")
    return parse_message(payload)


def recv_binary(rfile) -> bytes:
    kind, payload = read_frame(rfile)
    if kind != KIND_BINARY:
        raise ProtocolError("expected a binary frame")
    return payload


def batch_from_wire(mode_name: str, buf: bytes) -> TransformBatch:
    try:
        mode = Mode(mode_name)
    except ValueError as exc:
        raise ProtocolError(f"unknown mode: {mode_name!r}") from exc
    slices = read_tensor(buf)
    if slices.ndim != 4 or slices.shape[3] != 4:
        raise ProtocolError(f"bad batch dims: {slices.shape}")
    thetas, scales = slice_params(mode)
    if slices.shape[0] != thetas.shape[0]:
        raise ProtocolError(
            f"batch has {slices.shape[0]} slices, mode {mode.value} expects {thetas.shape[0]}")
    return TransformBatch(slices=slices, thetas=thetas, scales=scales, mode=mode)


# ---------------------------------------------------------------------------
# server


class _PolicyHandler(socketserver.StreamRequestHandler):
    def handle(self):
        vfs: dict[Mode, ValueFunction] = {}
        try:
            hello = recv_message(self.rfile)
            if hello.get("type") != "HELLO":
                send_message(self.wfile, {"type": "ERROR",
                                          "message": f"expected HELLO, got {hello.get('type')}"})
                return
            their_version = int(hello.get("version", "0"))
            if their_version != PROTOCOL_VERSION:
                send_message(self.wfile, {
                    "type": "ERROR", "message": "protocol version mismatch",
                    "ours": PROTOCOL_VERSION, "theirs": their_version})
                return
            send_message(self.wfile, {"type": "HELLO_ACK", "version": PROTOCOL_VERSION})
            while True:
                try:
                    msg = recv_message(self.rfile)
                except EOFError:
                    return
                if msg["type"] == "BYE":
                    return
                if msg["type"] != "EVAL_REQUEST":
                    send_message(self.wfile, {"type": "ERROR",
                                              "message": f"unexpected message type {msg['type']}"})
                    return
                buf = recv_binary(self.rfile)
                batch = batch_from_wire(msg.get("mode", ""), buf)
                if batch.mode not in vfs:
                    vfs[batch.mode] = make_value_function(
                        self.server.vf_spec, batch.mode, self.server.policy_cfg)
                values = vfs[batch.mode].evaluate(batch)
                reply = write_tensor(values.values)
                send_message(self.wfile, {
                    "type": "EVAL_REPLY", "version": PROTOCOL_VERSION,
                    "mode": batch.mode.value,
                    "dims": ",".join(str(d) for d in values.values.shape)})
                write_frame(self.wfile, KIND_BINARY, reply)
        except (ProtocolError, ValueError) as exc:
            try:
                send_message(self.wfile, {"type": "ERROR", "message": str(exc)})
            except OSError:
                pass
        except (ConnectionError, EOFError):
            pass
        finally:
            for vf in vfs.values():
                vf.close()


class PolicyServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], vf_spec: str,
                 policy_cfg: PolicyConfig | None = None):
        super().__init__(addr, _PolicyHandler)
        self.vf_spec = vf_spec
        self.policy_cfg = policy_cfg or PolicyConfig()

    @property
    def bound_address(self) -> tuple[str, int]:
        return self.socket.getsockname()[:2]


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ValueError(f"address must be host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def serve_remote_policy(bind: str, vf_spec: str,
                        policy_cfg: PolicyConfig | None = None,
                        ready_event: threading.Event | None = None) -> None:
    """Serve value-function evaluations until interrupted."""
    server = PolicyServer(parse_address(bind), vf_spec, policy_cfg)
    if ready_event is not None:
        server.ready_port = server.bound_address[1]
        ready_event.set()
    with server:
        server.serve_forever()


# ---------------------------------------------------------------------------
# client-side value function


class RemoteVF(ValueFunction):
    """Value function backed by a remote policy provider.

    Connects lazily (fork-safe) and serializes access to the connection."""

    def __init__(self, address: str, mode: Mode):
        self.address = address
        self.mode = mode
        self._lock = threading.Lock()
        self._sock: socket.socket | None = None
        self._rfile = None
        self._wfile = None

    def _connect(self):
        host, port = parse_address(self.address)
        self._sock = socket.create_connection((host, port), timeout=60.0)
        self._rfile = self._sock.makefile("rb")
        self._wfile = self._sock.makefile("wb")
        send_message(self._wfile, {"type": "HELLO", "version": PROTOCOL_VERSION})
        ack = recv_message(self._rfile)
        if ack.get("type") == "ERROR":
            raise ProtocolError(f"server rejected handshake: {ack.get('message')}")
        if ack.get("type") != "HELLO_ACK" or int(ack.get("version", "0")) != PROTOCOL_VERSION:
            raise ProtocolError(f"bad handshake reply: {ack}")

    def evaluate(self, batch: TransformBatch) -> ValueMapBatch:
        with self._lock:
            if self._sock is None:
                self._connect()
            buf = write_tensor(batch.slices)
            send_message(self._wfile, {
                "type": "EVAL_REQUEST", "version": PROTOCOL_VERSION,
                "mode": batch.mode.value,
                "dims": ",".join(str(d) for d in batch.slices.shape)})
            write_frame(self._wfile, KIND_BINARY, buf)
            reply = recv_message(self._rfile)
            if reply.get("type") == "ERROR":
                raise ProtocolError(f"remote policy error: {reply.get('message')}")
            if reply.get("type") != "EVAL_REPLY":
                raise ProtocolError(f"unexpected reply type: {reply.get('type')}")
            values = read_tensor(recv_binary(self._rfile))
        if values.ndim != 3 or values.shape[0] != batch.t:
            raise ProtocolError(f"bad value map dims: {values.shape}")
        if not np.isfinite(values).all():
            raise ProtocolError("value map contains non-finite entries")
        return ValueMapBatch(values=values, mode=batch.mode)

    def close(self):
        with self._lock:
            if self._sock is not None:
                try:
                    send_message(self._wfile, {"type": "BYE"})
                except OSError:
                    pass
                try:
                    self._sock.close()
                finally:
                    self._sock = None
                    self._rfile = None
                    self._wfile = None
