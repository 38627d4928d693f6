"""Client/server exchange of parameter updates.

Two interchangeable transports share one interface: ``InProcessTransport``
passes arrays directly, ``TcpTransport`` runs a localhost server and one
socket per client speaking newline-delimited JSON.

Wire format, one message per line::

    {"type":"UPDATE","round":3,"client_id":1,"payload":[0.25,-1.5,...]}

Payloads hold ``dim + 1`` numbers (weights then bias) or none at all. Floats
are written with ``repr`` precision so every value survives a round trip
bit for bit. A HELLO may carry an extra integer ``train_size`` field so the
server can weight FedAvg updates; decoders that ignore it stay compatible.
"""

from __future__ import annotations

import enum
import json
import logging
import math
import queue
import socket
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .algorithms import ProtocolError
from .model import ClientUpdate

log = logging.getLogger(__name__)

SOCKET_TIMEOUT = 60.0


class MsgType(str, enum.Enum):
    HELLO = "HELLO"
    INIT_MODEL = "INIT_MODEL"
    UPDATE = "UPDATE"
    ROUND_COMPLETE = "ROUND_COMPLETE"
    SHUTDOWN = "SHUTDOWN"


class DecodeError(ValueError):
    def __init__(self, field_name: str, detail: str):
        super().__init__(f"bad {field_name!r}: {detail}")
        self.field = field_name


class TransportError(RuntimeError):
    def __init__(self, client_id, detail: str):
        super().__init__(f"client {client_id}: {detail}")
        self.client_id = client_id


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    round: int
    client_id: int
    payload: tuple[float, ...] = ()
    train_size: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        object.__setattr__(self, "payload", tuple(float(v) for v in self.payload))
        if self.round < 0:
            raise ValueError(f"round must be >= 0, got {self.round}")


def encode(msg: WireMessage) -> bytes:
    obj = {
        "type": msg.msg_type.value,
        "round": int(msg.round),
        "client_id": int(msg.client_id),
        "payload": list(msg.payload),
    }
    if msg.train_size is not None:
        obj["train_size"] = int(msg.train_size)
    return (json.dumps(obj, separators=(",", ":"), allow_nan=False) + "\n").encode("utf-8")


def _int_field(obj: dict, name: str) -> int:
    value = obj.get(name)
    if not isinstance(value, int) or isinstance(value, bool):
        raise DecodeError(name, f"expected an integer, got {value!r}")
    return value


def decode(line: bytes, dim: int | None = None) -> WireMessage:
    """Parse one line. With ``dim`` given, payloads must hold 0 or dim + 1 values."""
    try:
        obj = json.loads(line.decode("utf-8") if isinstance(line, (bytes, bytearray)) else line)
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DecodeError("line", f"not a JSON object ({exc})") from None
    if not isinstance(obj, dict):
        raise DecodeError("line", "not a JSON object")
    try:
        msg_type = MsgType(obj.get("type"))
    except ValueError:
        raise DecodeError("type", f"unknown message type {obj.get('type')!r}") from None
    rnd = _int_field(obj, "round")
    if rnd < 0:
        raise DecodeError("round", f"must be >= 0, got {rnd}")
    client_id = _int_field(obj, "client_id")
    payload = obj.get("payload")
    if not isinstance(payload, list):
        raise DecodeError("payload", f"expected an array, got {type(payload).__name__}")
    for v in payload:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise DecodeError("payload", f"non-numeric entry {v!r}")
    if dim is not None and len(payload) not in (0, dim + 1):
        raise DecodeError("payload", f"length {len(payload)}, expected 0 or {dim + 1}")
    train_size = None
    if "train_size" in obj:
        train_size = _int_field(obj, "train_size")
    return WireMessage(msg_type, rnd, client_id, tuple(float(v) for v in payload), train_size)


class RoundCollector:
    """Gathers one UPDATE per client for a round, in any arrival order."""

    def __init__(self, n_clients: int, rnd: int, train_sizes: Sequence[int]):
        self.n_clients = n_clients
        self.round = rnd
        self.train_sizes = list(train_sizes)
        self._got: dict[int, np.ndarray] = {}

    def add(self, msg: WireMessage):
        if msg.msg_type is not MsgType.UPDATE:
            raise ProtocolError(f"round {self.round}: expected UPDATE, got {msg.msg_type.value}")
        if msg.round != self.round:
            raise ProtocolError(f"round {self.round}: update from client {msg.client_id} tagged round {msg.round}")
        if not 0 <= msg.client_id < self.n_clients:
            raise ProtocolError(f"round {self.round}: unknown client {msg.client_id}")
        if msg.client_id in self._got:
            raise ProtocolError(f"round {self.round}: duplicate update from client {msg.client_id}")
        self._got[msg.client_id] = np.array(msg.payload, dtype=np.float64)

    @property
    def complete(self) -> bool:
        return len(self._got) == self.n_clients

    def updates(self) -> list[ClientUpdate]:
        if not self.complete:
            missing = sorted(set(range(self.n_clients)) - set(self._got))
            raise ProtocolError(f"round {self.round}: missing updates from clients {missing}")
        return [ClientUpdate(i, self._got[i], self.train_sizes[i]) for i in range(self.n_clients)]


def update_message(u: ClientUpdate, rnd: int) -> WireMessage:
    return WireMessage(MsgType.UPDATE, rnd, u.client_id, tuple(u.delta))


@dataclass
class Trace:
    """Ordered log of transport events, used to check round-barrier behaviour."""

    events: list[tuple] = field(default_factory=list)

    def add(self, *event):
        self.events.append(event)


class InProcessTransport:
    def __init__(self, n_clients: int, dim: int):
        self.n_clients = n_clients
        self.dim = dim
        self.train_sizes: list[int] = []
        self.trace = Trace()

    def start(self, init_params: np.ndarray, train_sizes: Sequence[int]) -> list[np.ndarray]:
        self.train_sizes = list(train_sizes)
        return [np.array(init_params, dtype=np.float64) for _ in range(self.n_clients)]

    def exchange_round(self, rnd: int, updates: Sequence[ClientUpdate], relay: bool = True) -> list[ClientUpdate]:
        """Collect one update per client; with ``relay`` hand every client the package."""
        collector = RoundCollector(self.n_clients, rnd, self.train_sizes)
        for u in updates:
            self.trace.add("send", rnd, u.client_id)
            collector.add(update_message(u, rnd))
        collected = collector.updates()
        self.trace.add("collected", rnd)
        if relay:
            for i in range(self.n_clients):
                self.trace.add("deliver", rnd, i)
        return collected

    def broadcast(self, rnd: int, params: np.ndarray) -> np.ndarray:
        for i in range(self.n_clients):
            self.trace.add("deliver", rnd, i)
        return np.array(params, dtype=np.float64)

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LineChannel:
    """Newline-framed message stream over one socket."""

    def __init__(self, sock: socket.socket, dim: int | None):
        self.sock = sock
        self.dim = dim
        self._reader = sock.makefile("rb")

    def send(self, msg: WireMessage):
        self.sock.sendall(encode(msg))

    def recv(self) -> WireMessage | None:
        line = self._reader.readline()
        if not line:
            return None
        return decode(line, self.dim)

    def close(self):
        # wake any thread blocked in readline before closing the buffered reader
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        self._reader.close()


class UpdateServer:
    """Accepts ``n_clients`` connections and runs the per-round barrier."""

    def __init__(self, n_clients: int, dim: int, host: str = "127.0.0.1", port: int = 0):
        self.n_clients = n_clients
        self.dim = dim
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(SOCKET_TIMEOUT)
        self.address = self._listener.getsockname()[:2]
        self.channels: dict[int, LineChannel] = {}
        self.train_sizes: list[int] = []
        self._inbox: queue.Queue = queue.Queue()
        self._threads: list[threading.Thread] = []
        self.trace = Trace()

    def accept_clients(self, init_params: np.ndarray):
        """Handshake: each client sends HELLO, the server answers INIT_MODEL."""
        sizes = {}
        while len(self.channels) < self.n_clients:
            conn, _ = self._listener.accept()
            conn.settimeout(SOCKET_TIMEOUT)
            chan = LineChannel(conn, self.dim)
            hello = chan.recv()
            if hello is None or hello.msg_type is not MsgType.HELLO:
                chan.close()
                raise ProtocolError(f"expected HELLO, got {hello}")
            cid = hello.client_id
            if not 0 <= cid < self.n_clients or cid in self.channels:
                chan.close()
                raise ProtocolError(f"unexpected or duplicate HELLO from client {cid}")
            self.channels[cid] = chan
            sizes[cid] = hello.train_size or 1
            self.trace.add("hello", cid)
        self.train_sizes = [sizes[i] for i in range(self.n_clients)]
        payload = tuple(np.asarray(init_params, dtype=np.float64))
        for cid in range(self.n_clients):
            self.channels[cid].send(WireMessage(MsgType.INIT_MODEL, 0, cid, payload))
            t = threading.Thread(target=self._pump, args=(cid,), daemon=True)
            t.start()
            self._threads.append(t)

    def _pump(self, cid: int):
        chan = self.channels[cid]
        while True:
            try:
                msg = chan.recv()
            except (OSError, DecodeError) as exc:
                self._inbox.put((cid, exc))
                return
            self._inbox.put((cid, msg))
            if msg is None:
                return

    def collect(self, rnd: int) -> list[ClientUpdate]:
        collector = RoundCollector(self.n_clients, rnd, self.train_sizes)
        while not collector.complete:
            try:
                cid, msg = self._inbox.get(timeout=SOCKET_TIMEOUT)
            except queue.Empty:
                raise TransportError("?", f"round {rnd}: timed out waiting for updates") from None
            if msg is None:
                raise TransportError(cid, f"round {rnd}: connection closed")
            if isinstance(msg, Exception):
                raise TransportError(cid, f"round {rnd}: {msg}")
            if msg.client_id != cid:
                raise ProtocolError(f"round {rnd}: connection of client {cid} sent id {msg.client_id}")
            self.trace.add("recv", rnd, cid)
            collector.add(msg)
        self.trace.add("collected", rnd)
        return collector.updates()

    def relay(self, rnd: int, updates: Sequence[ClientUpdate]):
        """Send every client the packed per-client deltas, then ROUND_COMPLETE."""
        lines = b"".join(encode(update_message(u, rnd)) for u in updates)
        for cid in range(self.n_clients):
            done = encode(WireMessage(MsgType.ROUND_COMPLETE, rnd, cid))
            self._send_raw(cid, rnd, lines + done)

    def broadcast(self, rnd: int, params: np.ndarray):
        payload = tuple(np.asarray(params, dtype=np.float64))
        for cid in range(self.n_clients):
            self._send_raw(cid, rnd, encode(WireMessage(MsgType.ROUND_COMPLETE, rnd, cid, payload)))

    def _send_raw(self, cid: int, rnd: int, data: bytes):
        try:
            self.channels[cid].sock.sendall(data)
        except OSError as exc:
            raise TransportError(cid, f"round {rnd}: send failed ({exc})") from None
        self.trace.add("deliver", rnd, cid)

    def shutdown(self, rnd: int = 0):
        for cid, chan in self.channels.items():
            try:
                chan.send(WireMessage(MsgType.SHUTDOWN, rnd, cid))
            except OSError:
                pass
        for chan in self.channels.values():
            chan.close()
        self._listener.close()


class UpdateClient:
    def __init__(self, client_id: int, dim: int):
        self.client_id = client_id
        self.dim = dim
        self.chan: LineChannel | None = None

    def hello(self, host: str, port: int, train_size: int):
        sock = socket.create_connection((host, port), timeout=SOCKET_TIMEOUT)
        self.chan = LineChannel(sock, self.dim)
        self.chan.send(WireMessage(MsgType.HELLO, 0, self.client_id, (), train_size))

    def await_init(self) -> np.ndarray:
        return self.params_from(self._expect(MsgType.INIT_MODEL, 0))

    def connect(self, host: str, port: int, train_size: int) -> np.ndarray:
        self.hello(host, port, train_size)
        return self.await_init()

    def _recv(self, rnd) -> WireMessage:
        try:
            msg = self.chan.recv()
        except OSError as exc:
            raise TransportError(self.client_id, f"round {rnd}: {exc}") from None
        if msg is None:
            raise TransportError(self.client_id, f"round {rnd}: server closed the connection")
        return msg

    def _expect(self, kind: MsgType, rnd: int) -> WireMessage:
        msg = self._recv(rnd)
        if msg.msg_type is not kind:
            raise ProtocolError(f"client {self.client_id}: expected {kind.value}, got {msg.msg_type.value}")
        return msg

    @staticmethod
    def params_from(msg: WireMessage) -> np.ndarray:
        return np.array(msg.payload, dtype=np.float64)

    def send_update(self, rnd: int, delta: np.ndarray):
        self.chan.send(WireMessage(MsgType.UPDATE, rnd, self.client_id, tuple(delta)))

    def receive_round(self, rnd: int):
        """Read until ROUND_COMPLETE.

        Returns ``(deltas, params)``: relayed peer deltas in client-id order
        and, for strategies that broadcast a model, the new parameters.
        A SHUTDOWN arriving instead yields ``None``.
        """
        got: dict[int, np.ndarray] = {}
        while True:
            msg = self._recv(rnd)
            if msg.msg_type is MsgType.SHUTDOWN:
                return None
            if msg.round != rnd:
                raise ProtocolError(f"client {self.client_id}: expected round {rnd}, got {msg.round}")
            if msg.msg_type is MsgType.UPDATE:
                if msg.client_id in got:
                    raise ProtocolError(f"client {self.client_id}: duplicate relay of client {msg.client_id}")
                got[msg.client_id] = np.array(msg.payload, dtype=np.float64)
            elif msg.msg_type is MsgType.ROUND_COMPLETE:
                params = self.params_from(msg) if msg.payload else None
                deltas = [got[i] for i in sorted(got)]
                return deltas, params
            else:
                raise ProtocolError(f"client {self.client_id}: unexpected {msg.msg_type.value}")

    def wait_shutdown(self):
        msg = self._recv("shutdown")
        if msg.msg_type is not MsgType.SHUTDOWN:
            raise ProtocolError(f"client {self.client_id}: expected SHUTDOWN, got {msg.msg_type.value}")

    def close(self):
        if self.chan is not None:
            self.chan.close()


class TcpTransport:
    """Localhost server plus ``n_clients`` sockets, all driven from one thread.

    Clients send in ``send_order`` (client-id order by default); the server
    reads whatever arrives first and normalises to client-id order.
    """

    def __init__(self, n_clients: int, dim: int, host: str = "127.0.0.1", port: int = 0):
        self.n_clients = n_clients
        self.dim = dim
        self.server = UpdateServer(n_clients, dim, host, port)
        self.clients = [UpdateClient(i, dim) for i in range(n_clients)]
        self.send_order: list[int] | None = None

    @property
    def trace(self) -> Trace:
        return self.server.trace

    def start(self, init_params: np.ndarray, train_sizes: Sequence[int]) -> list[np.ndarray]:
        host, port = self.server.address
        result: list = [None] * self.n_clients
        accept = threading.Thread(target=self._accept, args=(init_params, result), daemon=True)
        accept.start()
        for c in self.clients:
            c.hello(host, port, train_sizes[c.client_id])
        accept.join()
        if result[0] is not None:
            raise result[0]
        return [c.await_init() for c in self.clients]

    def _accept(self, init_params, result):
        try:
            self.server.accept_clients(init_params)
        except Exception as exc:  # re-raised in the calling thread
            result[0] = exc

    def exchange_round(self, rnd: int, updates: Sequence[ClientUpdate], relay: bool = True) -> list[ClientUpdate]:
        by_id = {u.client_id: u for u in updates}
        for cid in self.send_order or range(self.n_clients):
            self.clients[cid].send_update(rnd, by_id[cid].delta)
        collected = self.server.collect(rnd)
        if not relay:
            return collected
        self.server.relay(rnd, collected)
        expected = [u.delta for u in collected]
        for c in self.clients:
            deltas, _ = c.receive_round(rnd)
            if len(deltas) != len(expected) or not all(np.array_equal(a, b) for a, b in zip(deltas, expected)):
                raise ProtocolError(f"round {rnd}: client {c.client_id} received a corrupted package")
        return collected

    def broadcast(self, rnd: int, params: np.ndarray) -> np.ndarray:
        self.server.broadcast(rnd, params)
        received = [c.receive_round(rnd)[1] for c in self.clients]
        for cid, p in enumerate(received):
            if p is None or not np.array_equal(p, received[0]):
                raise ProtocolError(f"round {rnd}: client {cid} received different parameters")
        return received[0]

    def close(self):
        self.server.shutdown()
        for c in self.clients:
            if c.chan is None:
                continue
            try:
                c.wait_shutdown()
            except (TransportError, ProtocolError, OSError):
                pass
            c.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def make_transport(kind: str, n_clients: int, dim: int):
    if kind == "inprocess":
        return InProcessTransport(n_clients, dim)
    if kind == "tcp":
        return TcpTransport(n_clients, dim)
    raise ValueError(f"unknown transport {kind!r}")
