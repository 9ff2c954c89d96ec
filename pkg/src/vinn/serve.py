"""Policy service over TCP.

Each connection opens with a handshake: the client sends ``b"VNN1"`` and a u16
protocol version, the server answers with the same magic and the version it
speaks (and closes if they differ). After that both sides exchange frames,
each a 4-byte big-endian length followed by the payload. Numbers inside
payloads are little-endian.

Request payload::

    magic "VNN1" | u16 version | u16 flags | u32 obs_dim | obs_dim x f32

Response payload::

    u8 status | u8 gripper | u16 reserved | 3 x f32 translation |
    f32 nearest distance | utf-8 error text (only when status != 0)

Flag bit 0 asks for the unscaled action (the client applies the scale).
"""
from __future__ import annotations

import logging
import socket
import socketserver
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .data import Action, GripperState
from .encoder import Encoder
from .policy import NeighborIndex, PolicyConfig, predict_detailed, scale_action

log = logging.getLogger(__name__)

MAGIC = b"VNN1"
VERSION = 1
FLAG_CLIENT_SCALE = 0x1
MAX_FRAME = 1 << 24
SHUTDOWN_GRACE = 2.0  # seconds a half-sent frame may stall once shutdown begins

STATUS_OK = 0
STATUS_BAD_FRAME = 1
STATUS_DIM_MISMATCH = 2
STATUS_INTERNAL = 3

_HANDSHAKE = struct.Struct("<4sH")
_REQ_HEAD = struct.Struct("<4sHHI")
_RESP = struct.Struct("<BBH3ff")
_LEN = struct.Struct(">I")


class ProtocolError(Exception):
    pass


class QueryTimeout(TimeoutError):
    pass


class ServerError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(f"server returned status {status}: {message}")
        self.status = status
        self.message = message


@dataclass(frozen=True)
class Response:
    status: int
    translation: np.ndarray
    gripper: int
    distance: float
    error: str = ""

    def action(self) -> Action:
        return Action(self.translation, GripperState(self.gripper))


# --- encoding ---------------------------------------------------------------

def frame(payload: bytes) -> bytes:
    return _LEN.pack(len(payload)) + payload


def encode_request(obs, flags: int = 0, version: int = VERSION) -> bytes:
    x = np.ascontiguousarray(np.asarray(obs, dtype="<f4").reshape(-1))
    return _REQ_HEAD.pack(MAGIC, version, flags, x.size) + x.tobytes()


def decode_request(payload: bytes):
    """Returns ``(flags, obs float32)``; raises ProtocolError on malformed frames."""
    if len(payload) < _REQ_HEAD.size:
        raise ProtocolError(f"request of {len(payload)} bytes is shorter than its header")
    magic, version, flags, n = _REQ_HEAD.unpack_from(payload)
    if magic != MAGIC:
        raise ProtocolError(f"bad request magic {magic!r}")
    if version != VERSION:
        raise ProtocolError(f"unsupported request version {version}")
    body = len(payload) - _REQ_HEAD.size
    if body != 4 * n:
        raise ProtocolError(f"declared obs_dim {n} needs {4 * n} payload bytes, got {body}")
    return flags, np.frombuffer(payload, dtype="<f4", count=n, offset=_REQ_HEAD.size).astype(np.float32)


def encode_response(r: Response) -> bytes:
    t = np.asarray(r.translation, dtype=np.float32).reshape(3)
    out = _RESP.pack(r.status, r.gripper, 0, *t.tolist(), float(r.distance))
    return out + r.error.encode("utf-8") if r.status != STATUS_OK else out


def decode_response(payload: bytes) -> Response:
    if len(payload) < _RESP.size:
        raise ProtocolError(f"response of {len(payload)} bytes is shorter than its header")
    status, gripper, _, x, y, z, dist = _RESP.unpack_from(payload)
    if status > STATUS_INTERNAL:
        raise ProtocolError(f"unknown status code {status}")
    if gripper > 3:
        raise ProtocolError(f"bad gripper code {gripper}")
    err = payload[_RESP.size:].decode("utf-8", errors="replace")
    return Response(status, np.array([x, y, z], dtype=np.float32), gripper, dist, err)


def _error(status: int, message: str) -> Response:
    return Response(status, np.zeros(3, np.float32), 0, float("nan"), message)


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    while n:
        b = sock.recv(n)
        if not b:
            raise ConnectionError("connection closed mid-frame")
        chunks.append(b)
        n -= len(b)
    return b"".join(chunks)


def _discard(sock: socket.socket, n: int) -> None:
    while n:
        b = sock.recv(min(n, 1 << 16))
        if not b:
            raise ConnectionError("connection closed mid-frame")
        n -= len(b)


# --- server -----------------------------------------------------------------

class PolicyService:
    """The stateless request handler: decode, predict, scale, encode."""

    def __init__(self, index: NeighborIndex, encoder: Encoder, cfg: PolicyConfig):
        if encoder.embed_dim != index.dim:
            raise ValueError(f"encoder embeds into {encoder.embed_dim} dims, index has {index.dim}")
        if cfg.k > len(index):
            raise ValueError(f"k={cfg.k} exceeds index size {len(index)}")
        self.index, self.encoder, self.cfg = index, encoder, cfg

    def handle(self, payload: bytes) -> Response:
        try:
            flags, obs = decode_request(payload)
        except ProtocolError as e:
            return _error(STATUS_BAD_FRAME, str(e))
        if obs.size != self.encoder.obs_dim:
            return _error(STATUS_DIM_MISMATCH, f"obs_dim {obs.size} != expected {self.encoder.obs_dim}")
        try:
            pred = predict_detailed(self.index, self.encoder, obs, self.cfg)
            action = pred.action if flags & FLAG_CLIENT_SCALE else scale_action(pred.action, self.cfg.action_scale)
        except Exception as e:  # never drop a request silently
            log.exception("prediction failed")
            return _error(STATUS_INTERNAL, f"{type(e).__name__}: {e}")
        return Response(STATUS_OK, action.translation.astype(np.float32), int(action.gripper),
                        float(pred.neighbors.distances[0]))


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        sock: socket.socket = self.request
        server: PolicyServer = self.server  # type: ignore[assignment]
        sock.settimeout(server.poll_interval)
        try:
            hello = self._read(sock, _HANDSHAKE.size)
            if hello is None:
                return
            magic, version = _HANDSHAKE.unpack(hello)
            sock.sendall(_HANDSHAKE.pack(MAGIC, VERSION))
            if magic != MAGIC or version != VERSION:
                return
            while True:
                head = self._read(sock, _LEN.size)
                if head is None:
                    return
                (n,) = _LEN.unpack(head)
                if n > MAX_FRAME:
                    # skip the oversized body so the stream stays in sync
                    _discard(sock, n)
                    resp = _error(STATUS_BAD_FRAME, f"frame of {n} bytes exceeds the {MAX_FRAME} byte limit")
                else:
                    payload = self._read(sock, n, idle_ok=False)
                    resp = server.service.handle(payload)
                sock.sendall(frame(encode_response(resp)))
        except (ConnectionError, OSError):
            return

    def _read(self, sock, n, idle_ok=True):
        """Read n bytes. Returns None on clean EOF or shutdown while idle."""
        server: PolicyServer = self.server  # type: ignore[assignment]
        buf = b""
        stalled = 0
        while len(buf) < n:
            try:
                b = sock.recv(n - len(buf))
            except socket.timeout:
                if server.stopping.is_set():
                    if not buf and idle_ok:
                        return None
                    stalled += 1
                    if stalled * server.poll_interval > SHUTDOWN_GRACE:
                        raise ConnectionError("peer stalled mid-frame during shutdown")
                continue
            if not b:
                if buf or not idle_ok:
                    raise ConnectionError("connection closed mid-frame")
                return None
            buf += b
        return buf


class PolicyServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True

    def __init__(self, address, service: PolicyService, poll_interval: float = 0.1):
        self.service = service
        self.poll_interval = poll_interval
        self.stopping = threading.Event()
        self._thread = None
        super().__init__(address, _Handler)

    @property
    def address(self) -> tuple[str, int]:
        host, port = self.server_address[:2]
        return host, port

    def start(self) -> "PolicyServer":
        self._thread = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": self.poll_interval},
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        """Stop accepting, let in-flight requests finish, close idle connections."""
        self.stopping.set()
        self.shutdown()
        self.server_close()
        if self._thread is not None:
            self._thread.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(index: NeighborIndex, encoder: Encoder, cfg: PolicyConfig, address=("127.0.0.1", 0)) -> PolicyServer:
    """Start a background server; ``address[1] == 0`` picks a free port."""
    return PolicyServer(tuple(address), PolicyService(index, encoder, cfg)).start()


def parse_address(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"address must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


# --- client -----------------------------------------------------------------

class Client:
    """One persistent connection; requests are answered in order."""

    def __init__(self, address, timeout: float = 1.0):
        self.timeout = timeout
        try:
            self.sock = socket.create_connection(tuple(address), timeout=timeout)
        except socket.timeout as e:
            raise QueryTimeout(f"connect to {address} timed out after {timeout}s") from e
        except ConnectionRefusedError as e:
            raise QueryTimeout(f"no server at {address}") from e
        try:
            self.sock.sendall(_HANDSHAKE.pack(MAGIC, VERSION))
            magic, version = _HANDSHAKE.unpack(self._recv(_HANDSHAKE.size))
        except BaseException:
            self.sock.close()
            raise
        if magic != MAGIC or version != VERSION:
            self.sock.close()
            raise ProtocolError(f"server speaks {magic!r} v{version}, client speaks {MAGIC!r} v{VERSION}")

    def _recv(self, n: int) -> bytes:
        try:
            return _recv_exact(self.sock, n)
        except socket.timeout as e:
            raise QueryTimeout(f"no reply within {self.timeout}s") from e

    def send_raw(self, payload: bytes) -> Response:
        self.sock.sendall(frame(payload))
        return self.read_response()

    def read_response(self) -> Response:
        (n,) = _LEN.unpack(self._recv(_LEN.size))
        if n > MAX_FRAME:
            raise ProtocolError(f"response frame of {n} bytes")
        return decode_response(self._recv(n))

    def query(self, obs, client_scaling: bool = False) -> Response:
        return self.send_raw(encode_request(obs, FLAG_CLIENT_SCALE if client_scaling else 0))

    def close(self) -> None:
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def client_query(address, obs, timeout: float = 1.0, client_scaling: bool = False) -> Action:
    """Round-trip one observation; raises ServerError on a non-ok status."""
    with Client(address, timeout) as c:
        r = c.query(obs, client_scaling)
    if r.status != STATUS_OK:
        raise ServerError(r.status, r.error)
    return r.action()
