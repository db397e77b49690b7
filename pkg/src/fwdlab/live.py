"""
Real sockets around the simulated components.

Both servers use :mod:`socketserver` threads; the wrapped state machine is
guarded by a lock so requests are handled one at a time.
"""

from __future__ import annotations

import socket
import socketserver
import threading
import time
from typing import Optional, Sequence

from .authns import AuthoritativeServer, ZoneScript
from .forwarder import Drop, Forwarder, ForwarderProfile, Respond
from .netsim import Address
from .wire import DnsError, frame, unframe

UPSTREAM_TIMEOUT = 2.0


def _read_frame(sock) -> Optional[bytes]:
    head = b""
    while len(head) < 2:
        chunk = sock.recv(2 - len(head))
        if not chunk:
            return None
        head += chunk
    n = int.from_bytes(head, "big")
    body = b""
    while len(body) < n:
        chunk = sock.recv(n - len(body))
        if not chunk:
            return None
        body += chunk
    return head + body


class _Udp(socketserver.ThreadingUDPServer):
    daemon_threads = True
    allow_reuse_address = True


class _Tcp(socketserver.ThreadingTCPServer):
    daemon_threads = True
    allow_reuse_address = True


class LiveService:
    """A UDP listener plus an optional TCP listener on the same address."""

    def __init__(self, listen: Address, handle, tcp: bool = True):
        self._handle = handle
        service = self

        class UdpHandler(socketserver.BaseRequestHandler):
            def handle(self):
                data, sock = self.request
                out = service.call(data, self.client_address, "udp")
                if out is not None:
                    sock.sendto(out, self.client_address)

        class TcpHandler(socketserver.BaseRequestHandler):
            def handle(self):
                self.request.settimeout(UPSTREAM_TIMEOUT * 2)
                try:
                    while True:
                        data = _read_frame(self.request)
                        if data is None:
                            return
                        out = service.call(data, self.client_address, "tcp")
                        if out is None:
                            return
                        self.request.sendall(out)
                except OSError:
                    return

        self.udp = _Udp(listen, UdpHandler)
        self.address = self.udp.server_address
        self.tcp = _Tcp(self.address, TcpHandler) if tcp else None
        self._threads: list[threading.Thread] = []

    def call(self, data: bytes, client: Address, transport: str) -> Optional[bytes]:
        return self._handle(data, tuple(client), transport)

    def start(self) -> "LiveService":
        for server in (self.udp, self.tcp):
            if server is not None:
                t = threading.Thread(target=server.serve_forever, daemon=True)
                t.start()
                self._threads.append(t)
        return self

    def serve_forever(self) -> None:
        self.start()
        try:
            for t in self._threads:
                t.join()
        except KeyboardInterrupt:
            pass
        finally:
            self.shutdown()

    def shutdown(self) -> None:
        for server in (self.udp, self.tcp):
            if server is not None:
                if self._threads:
                    server.shutdown()
                server.server_close()


def authoritative_service(zones: Sequence[ZoneScript], listen: Address = ("127.0.0.1", 5353)) -> LiveService:
    server = AuthoritativeServer(zones)
    lock = threading.Lock()

    def handle(data: bytes, client: Address, transport: str) -> Optional[bytes]:
        if transport == "tcp":
            try:
                data, _ = unframe(data)
            except DnsError:
                return None
        with lock:
            out = server.handle(data)
        if out is None:
            return None
        return frame(out) if transport == "tcp" else out

    service = LiveService(listen, handle)
    service.server = server
    return service


def forwarder_service(
    profile: ForwarderProfile,
    upstream: Address,
    listen: Address = ("127.0.0.1", 5300),
    seed: int = 0,
) -> LiveService:
    """Run the forwarder model against a real upstream resolver.

    The upstream socket is bound to the port the model chose when the OS
    allows it (an ephemeral port otherwise); the reply is then fed back to
    the model as if it had arrived on the chosen port.
    """
    fwd = Forwarder(profile, upstream=tuple(upstream), seed=seed, clock=time.monotonic, wall_clock=time.time())
    lock = threading.Lock()

    def handle(data: bytes, client: Address, transport: str) -> Optional[bytes]:
        with lock:
            action = fwd.handle_client_query(data, client, transport)
        if isinstance(action, Drop):
            return None
        if isinstance(action, Respond):
            return action.payload
        with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
            try:
                s.bind(("0.0.0.0", action.port))
            except OSError:
                s.bind(("0.0.0.0", 0))
            s.settimeout(UPSTREAM_TIMEOUT)
            s.sendto(action.payload, action.upstream)
            try:
                reply, src = s.recvfrom(65535)
            except OSError:
                return None
        with lock:
            result = fwd.handle_upstream_response(reply, tuple(src), action.port)
        return result.payload if isinstance(result, Respond) else None

    service = LiveService(listen, handle, tcp=profile.tcp_supported)
    service.forwarder = fwd
    return service
