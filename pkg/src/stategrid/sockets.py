"""Socket transport: the same behaviors and codec over TCP streams.

Each node runs a listener plus a single worker thread, so a behavior still
consumes one envelope at a time. Outbound envelopes reuse one connection
per destination, which preserves per-link FIFO order and keeps socket runs
comparable, link by link, with simulated traces.
"""

from __future__ import annotations

import queue
import socket
import threading

from .errors import ConnError
from .nodes import NodeBehavior
from .protocol import Envelope, decode_envelope, encode_envelope


def socket_send(addr: tuple[str, int], envelope: Envelope, timeout: float = 2.0) -> None:
    """One-shot delivery to a listening node."""
    try:
        with socket.create_connection(addr, timeout=timeout) as conn:
            conn.sendall(encode_envelope(envelope))
    except OSError as exc:
        raise ConnError(f"cannot reach {addr}: {exc}") from exc


class SocketNode:
    """Hosts one behavior behind a TCP listener.

    The shared ``registry`` maps node addresses to (host, port) pairs; fill
    it as nodes are constructed, then ``start()`` them.
    """

    def __init__(
        self,
        behavior: NodeBehavior,
        registry: dict[str, tuple[str, int]],
        host: str = "127.0.0.1",
        port: int = 0,
    ):
        self.behavior = behavior
        self.registry = registry
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._inbox: queue.Queue = queue.Queue()
        self._conns: dict[str, socket.socket] = {}
        self._lock = threading.Lock()
        self._stopping = threading.Event()
        self.sent: list[Envelope] = []
        self.received: list[Envelope] = []

    def start(self) -> None:
        threading.Thread(target=self._accept_loop, daemon=True).start()
        threading.Thread(target=self._worker, daemon=True).start()

    def submit(self, envelopes: list[Envelope]) -> None:
        """Queue locally produced envelopes (driver-initiated flows)."""
        for env in envelopes:
            self._inbox.put(("out", env))

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _ = self._listener.accept()
            except OSError:
                return
            threading.Thread(target=self._reader, args=(conn,), daemon=True).start()

    def _reader(self, conn: socket.socket) -> None:
        with conn, conn.makefile("rb") as stream:
            for line in stream:
                if self._stopping.is_set():
                    return
                self._inbox.put(("in", decode_envelope(line)))

    def _worker(self) -> None:
        while True:
            item = self._inbox.get()
            if item is None:
                return
            direction, env = item
            if direction == "in":
                self.received.append(env)
                outs = self.behavior.step(env, self.behavior.clock)
            else:
                outs = [env]
            for out in outs:
                self._send(out)

    def _send(self, env: Envelope) -> None:
        with self._lock:
            conn = self._conns.get(env.recipient)
            if conn is None:
                try:
                    conn = socket.create_connection(
                        self.registry[env.recipient], timeout=5.0
                    )
                except (OSError, KeyError) as exc:
                    raise ConnError(
                        f"{self.behavior.address}: cannot reach {env.recipient}: {exc}"
                    ) from exc
                self._conns[env.recipient] = conn
            conn.sendall(encode_envelope(env))
            self.sent.append(env)

    def stop(self) -> None:
        self._stopping.set()
        self._inbox.put(None)
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            for conn in self._conns.values():
                try:
                    conn.close()
                except OSError:
                    pass
            self._conns.clear()


def socket_serve(
    behavior: NodeBehavior,
    registry: dict[str, tuple[str, int]],
    host: str = "127.0.0.1",
    port: int = 0,
) -> SocketNode:
    """Bind, register and start a node; returns the running handle."""
    node = SocketNode(behavior, registry, host, port)
    registry[behavior.address] = (node.host, node.port)
    node.start()
    return node
