"""Reliable FIFO message delivery between actors.

Two interchangeable transports share one frame format (4-byte big-endian
length prefix + canonical-JSON message body):

* :class:`SimTransport`: in-process, single-threaded, with seedable
  integer-step latency; fully deterministic.
* :class:`TcpTransport`: real sockets on loopback, one persistent
  connection per directed channel (which is what preserves FIFO order).

Messages are serialized on send and parsed on receive in both transports,
so any quantization the wire format applies is identical in either mode.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import queue
import socket
import struct
import threading
from dataclasses import dataclass

import numpy as np

from .errors import ChannelClosed, ReceiveTimeout, UnknownAddress
from .messages import ProtocolMessage, decode_message, encode_message

log = logging.getLogger(__name__)

MAX_FRAME_BYTES = 16 * 1024 * 1024
_HEADER = struct.Struct(">I")


@dataclass(frozen=True)
class Address:
    """A registered actor endpoint: node id plus transport-level locator."""

    node_id: str
    endpoint: str


@dataclass(frozen=True)
class Frame:
    """One wire unit: a 4-byte big-endian length prefix plus the message body."""

    body: bytes

    def __post_init__(self) -> None:
        if len(self.body) > MAX_FRAME_BYTES:
            raise ChannelClosed(
                f"frame of {len(self.body)} bytes exceeds {MAX_FRAME_BYTES}"
            )

    @property
    def length(self) -> int:
        return len(self.body)

    @classmethod
    def for_message(cls, msg: ProtocolMessage) -> Frame:
        return cls(encode_message(msg))

    def encode(self) -> bytes:
        return _HEADER.pack(self.length) + self.body

    def message(self) -> ProtocolMessage:
        return decode_message(self.body)


def encode_frame(msg: ProtocolMessage) -> bytes:
    return Frame.for_message(msg).encode()


class Endpoint:
    """One actor's handle on a transport."""

    node_id: str

    def send(self, dst: str, msg: ProtocolMessage) -> None:
        raise NotImplementedError

    def receive(self, budget: float) -> ProtocolMessage:
        """Oldest pending message, or ReceiveTimeout after the budget.

        The budget is simulation steps for SimTransport and seconds for
        TcpTransport.
        """
        raise NotImplementedError

    def try_receive(self) -> ProtocolMessage | None:
        raise NotImplementedError


# --- simulated ----------------------------------------------------------------


class SimTransport:
    """Deterministic in-process network.

    Each send is assigned a delivery step ``now + 1 + latency`` with latency
    drawn from a seeded generator in [0, max_latency]; per-channel delivery
    steps are forced monotone so FIFO order survives the latency shuffle.
    """

    def __init__(self, seed: int = 0, max_latency: int = 0) -> None:
        self._rng = np.random.default_rng(seed)
        self._max_latency = int(max_latency)
        self._clock = 0
        self._seq = itertools.count()
        self._inboxes: dict[str, list[tuple[int, int, bytes]]] = {}
        self._last_scheduled: dict[tuple[str, str], int] = {}

    @property
    def clock(self) -> int:
        return self._clock

    def register(self, node_id: str) -> SimEndpoint:
        if node_id in self._inboxes:
            raise ValueError(f"{node_id!r} is already registered")
        self._inboxes[node_id] = []
        return SimEndpoint(self, node_id)

    def addresses(self) -> dict[str, Address]:
        return {nid: Address(nid, f"sim:{nid}") for nid in self._inboxes}

    def advance(self, steps: int = 1) -> None:
        self._clock += steps

    def _send(self, src: str, dst: str, msg: ProtocolMessage) -> None:
        if dst not in self._inboxes:
            raise UnknownAddress(f"no endpoint registered for {dst!r}")
        frame = encode_frame(msg)
        latency = int(self._rng.integers(0, self._max_latency + 1)) if self._max_latency else 0
        deliver_at = self._clock + 1 + latency
        channel = (src, dst)
        deliver_at = max(deliver_at, self._last_scheduled.get(channel, 0))
        self._last_scheduled[channel] = deliver_at
        heapq.heappush(self._inboxes[dst], (deliver_at, next(self._seq), frame[_HEADER.size :]))

    def _try_receive(self, node_id: str) -> ProtocolMessage | None:
        inbox = self._inboxes[node_id]
        if inbox and inbox[0][0] <= self._clock:
            _, _, body = heapq.heappop(inbox)
            return decode_message(body)
        return None

    def _receive(self, node_id: str, budget: int) -> ProtocolMessage:
        for _ in range(int(budget) + 1):
            msg = self._try_receive(node_id)
            if msg is not None:
                return msg
            self._clock += 1
        raise ReceiveTimeout(f"{node_id}: nothing arrived within {budget} steps")


class SimEndpoint(Endpoint):
    def __init__(self, transport: SimTransport, node_id: str) -> None:
        self._transport = transport
        self.node_id = node_id

    def send(self, dst: str, msg: ProtocolMessage) -> None:
        self._transport._send(self.node_id, dst, msg)

    def receive(self, budget: float) -> ProtocolMessage:
        return self._transport._receive(self.node_id, int(budget))

    def try_receive(self) -> ProtocolMessage | None:
        return self._transport._try_receive(self.node_id)


# --- tcp ----------------------------------------------------------------------


def _read_exact(conn: socket.socket, n: int) -> bytes | None:
    buf = b""
    while len(buf) < n:
        chunk = conn.recv(n - len(buf))
        if not chunk:
            return None
        buf += chunk
    return buf


class TcpTransport:
    """Loopback TCP transport with an in-process address registry."""

    def __init__(self, host: str = "127.0.0.1") -> None:
        self._host = host
        self._registry: dict[str, tuple[str, int]] = {}
        self._endpoints: list[TcpEndpoint] = []
        self._lock = threading.Lock()

    def register(self, node_id: str) -> TcpEndpoint:
        with self._lock:
            if node_id in self._registry:
                raise ValueError(f"{node_id!r} is already registered")
            endpoint = TcpEndpoint(self, node_id, self._host)
            self._registry[node_id] = endpoint.sockaddr
            self._endpoints.append(endpoint)
            return endpoint

    def addresses(self) -> dict[str, Address]:
        with self._lock:
            return {
                nid: Address(nid, f"{host}:{port}")
                for nid, (host, port) in self._registry.items()
            }

    def lookup(self, node_id: str) -> tuple[str, int]:
        with self._lock:
            try:
                return self._registry[node_id]
            except KeyError:
                raise UnknownAddress(f"no endpoint registered for {node_id!r}") from None

    def close(self) -> None:
        for endpoint in self._endpoints:
            endpoint.close()


class TcpEndpoint(Endpoint):
    def __init__(self, transport: TcpTransport, node_id: str, host: str) -> None:
        self._transport = transport
        self.node_id = node_id
        self._inbox: queue.Queue[bytes] = queue.Queue()
        self._out: dict[str, socket.socket] = {}
        self._out_lock = threading.Lock()
        self._closed = False

        self._listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._listener.bind((host, 0))
        self._listener.listen()
        self.sockaddr = self._listener.getsockname()
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"accept-{node_id}", daemon=True
        )
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while not self._closed:
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(
                target=self._reader_loop, args=(conn,), name=f"read-{self.node_id}", daemon=True
            ).start()

    def _reader_loop(self, conn: socket.socket) -> None:
        with conn:
            while True:
                header = _read_exact(conn, _HEADER.size)
                if header is None:
                    return
                (length,) = _HEADER.unpack(header)
                if length > MAX_FRAME_BYTES:
                    log.error("%s: dropping oversized frame (%d bytes)", self.node_id, length)
                    return
                body = _read_exact(conn, length)
                if body is None:
                    return
                self._inbox.put(body)

    def send(self, dst: str, msg: ProtocolMessage) -> None:
        if self._closed:
            raise ChannelClosed(f"{self.node_id} endpoint is closed")
        frame = encode_frame(msg)
        addr = self._transport.lookup(dst)
        with self._out_lock:
            sock = self._out.get(dst)
            if sock is None:
                sock = socket.create_connection(addr, timeout=10.0)
                sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                self._out[dst] = sock
            try:
                sock.sendall(frame)
            except OSError as exc:
                self._out.pop(dst, None)
                sock.close()
                raise ChannelClosed(f"send to {dst} failed: {exc}") from exc

    def receive(self, budget: float) -> ProtocolMessage:
        try:
            body = self._inbox.get(timeout=budget)
        except queue.Empty:
            raise ReceiveTimeout(f"{self.node_id}: nothing arrived within {budget}s") from None
        return decode_message(body)

    def try_receive(self) -> ProtocolMessage | None:
        try:
            body = self._inbox.get_nowait()
        except queue.Empty:
            return None
        return decode_message(body)

    def close(self) -> None:
        self._closed = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._out_lock:
            for sock in self._out.values():
                try:
                    sock.close()
                except OSError:
                    pass
            self._out.clear()
