"""
Deterministic discrete-event network.

Endpoints bind ``(address, port)`` pairs. Packets are delivered in
timestamp order, ties broken by send order, and only to an exact binding.
Any sender may put any source address on a packet (spoofing is allowed),
but a node only ever sees packets addressed to one of its own bindings.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, replace
from typing import Callable, Optional, Protocol

import numpy as np

from .wire import DnsError, frame, parse_lenient, unframe

Address = tuple[str, int]


@dataclass(frozen=True)
class Packet:
    src: Address
    dst: Address
    payload: bytes
    transport: str = "udp"

    def readdress(self, src: Optional[Address] = None, dst: Optional[Address] = None) -> "Packet":
        return replace(self, src=src or self.src, dst=dst or self.dst)


@dataclass(frozen=True)
class Event:
    time: float
    src: Address
    dst: Address
    summary: str

    def __str__(self):
        return f"{self.time:12.6f} {fmt_addr(self.src):>21} -> {fmt_addr(self.dst):<21} {self.summary}"


def fmt_addr(addr: Address) -> str:
    return f"{addr[0]}:{addr[1]}"


def describe(payload: bytes, transport: str = "udp") -> str:
    data = payload
    if transport == "tcp":
        try:
            data, _ = unframe(payload)
        except DnsError:
            return "tcp <bad frame>"
    msg, err = parse_lenient(data)
    if msg is None:
        return f"<{len(payload)} bytes, unparsable>"
    text = msg.summary()
    if err is not None:
        text += f" <malformed: {err}>"
    return ("tcp " if transport == "tcp" else "") + text


class Node(Protocol):
    def receive(self, net: "SimNetwork", packet: Packet) -> None: ...


class SimNetwork:
    """Event queue plus a binding table.

    ``latency`` is the default one-way delay. ``packet_time`` is the
    simulated time one spoofed packet of a flood occupies.
    """

    def __init__(self, latency: float = 0.0005, packet_time: float = 1e-6):
        self.now = 0.0
        self.latency = latency
        self.packet_time = packet_time
        self.transcript: list[Event] = []
        self.dropped = 0
        self._queue: list = []
        self._seq = itertools.count()
        self._bindings: dict[Address, Node] = {}
        self._ports: dict[str, set[int]] = {}
        self._taps: dict[str, list[Packet]] = {}
        self._middleboxes: list[Callable[[Packet], Optional[Packet]]] = []

    # bindings

    def bind(self, addr: Address, node) -> None:
        self._bindings[addr] = node
        self._ports.setdefault(addr[0], set()).add(addr[1])

    def unbind(self, addr: Address) -> None:
        self._bindings.pop(addr, None)
        ports = self._ports.get(addr[0])
        if ports is not None:
            ports.discard(addr[1])

    def bound_ports(self, host: str) -> set[int]:
        return self._ports.get(host, set())

    def sync_ports(self, host: str, ports: set[int], node) -> None:
        """Make ``node`` bound on exactly ``ports`` of ``host`` (ports other than 53)."""
        current = {p for p in self.bound_ports(host) if self._bindings.get((host, p)) is node}
        for p in current - ports:
            self.unbind((host, p))
        for p in ports - current:
            self.bind((host, p), node)

    # observation

    def tap(self, host: str) -> list[Packet]:
        """Record every packet sent from ``host`` from now on."""
        return self._taps.setdefault(host, [])

    def add_middlebox(self, fn: Callable[[Packet], Optional[Packet]]) -> None:
        """Install an on-path element for :meth:`rpc` exchanges."""
        self._middleboxes.append(fn)

    def remove_middlebox(self, fn) -> None:
        self._middleboxes.remove(fn)

    def log(self, src: Address, dst: Address, summary: str) -> None:
        self.transcript.append(Event(self.now, src, dst, summary))

    # delivery

    def send(self, packet: Packet, delay: Optional[float] = None) -> None:
        tap = self._taps.get(packet.src[0])
        if tap is not None:
            tap.append(packet)
        when = self.now + (self.latency if delay is None else delay)
        heapq.heappush(self._queue, (when, next(self._seq), packet))

    def step(self) -> bool:
        if not self._queue:
            return False
        when, _, packet = heapq.heappop(self._queue)
        self.now = max(self.now, when)
        self._deliver(packet)
        return True

    def _deliver(self, packet: Packet) -> None:
        node = self._bindings.get(packet.dst)
        self.log(packet.src, packet.dst, describe(packet.payload, packet.transport))
        if node is None:
            self.dropped += 1
            return
        node.receive(self, packet)

    def run(self, until: Optional[float] = None, stop: Optional[Callable[[], bool]] = None) -> None:
        """Deliver events until the queue drains, ``stop()`` holds, or ``until`` passes."""
        while self._queue:
            if stop is not None and stop():
                return
            if until is not None and self._queue[0][0] > until:
                break
            self.step()
        if stop is not None and stop():
            return
        if until is not None:
            self.now = max(self.now, until)

    @property
    def idle(self) -> bool:
        return not self._queue

    def rpc(self, src: Address, dst: Address, payload: bytes) -> Optional[bytes]:
        """Synchronous request/response through the on-path middleboxes.

        Used for resolver-to-authoritative traffic, which never races
        with anything in the scenarios.
        """
        request = Packet(src, dst, payload)
        self.log(src, dst, describe(payload))
        node = self._bindings.get(dst)
        if node is None or not hasattr(node, "serve"):
            self.dropped += 1
            return None
        answer = node.serve(self, request)
        if answer is None:
            return None
        reply = Packet(dst, src, answer)
        for box in self._middleboxes:
            reply = box(reply)
            if reply is None:
                return None
        self.log(reply.src, reply.dst, describe(reply.payload))
        return reply.payload

    def flood(
        self,
        src: Address,
        dst_host: str,
        ports,
        txids,
        template: bytes,
    ) -> int:
        """Send one spoofed response per ``(port, txid)`` pair.

        Packets to unbound ports are discarded in bulk, as a host would with
        closed UDP ports; the rest are delivered in order. Returns the number
        of packets that reached a bound port.
        """
        ports = np.asarray(ports, dtype=np.int64)
        txids = np.asarray(txids, dtype=np.int64)
        open_ports = self.bound_ports(dst_host)
        if open_ports:
            hits = np.flatnonzero(np.isin(ports, np.fromiter(open_ports, dtype=np.int64)))
        else:
            hits = np.empty(0, dtype=np.int64)
        self.log(src, (dst_host, -1), f"spoofed flood of {len(ports)} packets, {len(hits)} to open ports")
        body = template[2:]
        for i in hits.tolist():
            port = int(ports[i])
            node = self._bindings.get((dst_host, port))
            if node is None:
                continue
            packet = Packet(src, (dst_host, port), int(txids[i]).to_bytes(2, "big") + body)
            node.receive(self, packet)
        self.dropped += len(ports) - len(hits)
        self.now += len(ports) * self.packet_time
        return len(hits)


class Collector:
    """Bindable sink that keeps whatever it receives."""

    def __init__(self):
        self.inbox: list[Packet] = []

    def receive(self, net: SimNetwork, packet: Packet) -> None:
        self.inbox.append(packet)


class SimEndpoint:
    """A host that exchanges DNS messages with one server over the network.

    ``exchange`` drives the event loop until the answer arrives or the
    timeout elapses in simulated time.
    """

    def __init__(self, net: SimNetwork, host: str, server: Address, rng):
        self.net = net
        self.host = host
        self.server = server
        self.rng = rng

    def _port(self) -> int:
        while True:
            port = self.rng.randint(1024, 65535)
            if port not in self.net.bound_ports(self.host):
                return port

    def send(self, payload: bytes, transport: str = "udp") -> tuple[Address, Collector]:
        addr = (self.host, self._port())
        sink = Collector()
        self.net.bind(addr, sink)
        data = frame(payload) if transport == "tcp" else payload
        self.net.send(Packet(addr, self.server, data, transport))
        return addr, sink

    def exchange(self, payload: bytes, timeout: float = 2.0, transport: str = "udp") -> Optional[bytes]:
        addr, sink = self.send(payload, transport)
        self.net.run(until=self.net.now + timeout, stop=lambda: bool(sink.inbox))
        self.net.unbind(addr)
        if not sink.inbox:
            return None
        data = sink.inbox[0].payload
        if transport == "tcp":
            try:
                data, _ = unframe(data)
            except DnsError:
                return None
        return data
