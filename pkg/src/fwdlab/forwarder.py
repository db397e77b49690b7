"""
DNS forwarder emulator.

A :class:`Forwarder` is a pure state machine: client queries and upstream
responses go in as raw bytes, and an action (respond, forward, drop) comes
out. The profile decides which of the architectures found in residential
routers it reproduces: a proper record cache, a qname-to-address map, or a
qname-to-packet map, together with TXID, source port, CD-flag, TCP and EDNS
behaviour.
"""

from __future__ import annotations

import random
import re
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Optional, Union

from .cache import RecordCache
from .netsim import Address, Packet
from .wire import (
    FLAG_AD,
    FLAG_CD,
    DnsError,
    DnsMessage,
    DnsName,
    MalformedMessage,
    Question,
    Rcode,
    ResourceRecord,
    RRClass,
    RRType,
    clear_flag_bits,
    frame,
    get_txid,
    name_to_naive_string,
    parse_message,
    serialize_message,
    set_txid,
    unframe,
)

CACHE_MODELS = ("none", "record_cache", "qname_addr_map", "qname_packet_map")
DECODERS = ("strict", "naive")
TXID_POLICIES = ("fresh_random", "forward_client", "sequential")
PORT_POLICIES = ("random_per_query", "random_at_boot", "static", "time_seeded_at_boot")
CD_POLICIES = ("clear_flag", "forward_and_cache", "forward_no_cache")
EDNS_BEHAVIORS = ("pass", "strip", "break_response")

PORT_MIN = 1024
PORT_MAX = 65535
EPHEMERAL_BASE = 49152
_LEHMER_A = 16807
_LEHMER_M = 2147483647

VERSION_BIND = DnsName((b"version", b"bind"))


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class ForwarderProfile:
    """Configuration of one forwarder family.

    ``alias_decoder`` controls how names inside upstream answers (record
    owners and CNAME targets) are decoded by a record cache; it defaults to
    ``decoder``. The map-based caches always answer with one synthesized A
    record, so ``cname_merge`` only changes the record cache.
    """

    name: str = "custom"
    cache_model: str = "record_cache"
    decoder: str = "strict"
    alias_decoder: Optional[str] = None
    txid_policy: str = "fresh_random"
    sequential_start: int = 1
    port_policy: str = "random_per_query"
    static_port: Optional[int] = None
    cd_policy: str = "forward_no_cache"
    tcp_supported: bool = True
    edns_behavior: str = "pass"
    cname_merge: bool = False
    version_bind: Optional[str] = None
    clock_reset_on_boot: bool = True
    daemon_start_delay: int = 0
    synth_ttl: int = 60

    def __post_init__(self):
        for attr, allowed in (
            ("cache_model", CACHE_MODELS),
            ("decoder", DECODERS),
            ("txid_policy", TXID_POLICIES),
            ("port_policy", PORT_POLICIES),
            ("cd_policy", CD_POLICIES),
            ("edns_behavior", EDNS_BEHAVIORS),
        ):
            if getattr(self, attr) not in allowed:
                raise ProfileError(f"{attr}={getattr(self, attr)!r}, expected one of {allowed}")
        if self.alias_decoder not in (None,) + DECODERS:
            raise ProfileError(f"alias_decoder={self.alias_decoder!r}")
        if self.cache_model in ("qname_addr_map", "qname_packet_map") and self.decoder != "naive":
            raise ProfileError(f"{self.cache_model} keys on the flattened qname and needs decoder=naive")
        if self.port_policy == "static":
            if self.static_port is None or not PORT_MIN <= self.static_port <= PORT_MAX:
                raise ProfileError(f"static port must lie in [{PORT_MIN}, {PORT_MAX}]")
        if not 0 <= self.sequential_start <= 0xFFFF:
            raise ProfileError("sequential_start must be a 16-bit value")

    @property
    def answer_decoder(self) -> str:
        return self.alias_decoder or self.decoder


BUILTIN_PROFILES: dict[str, ForwarderProfile] = {
    p.name: p
    for p in (
        ForwarderProfile(
            name="dproxy-like",
            cache_model="qname_addr_map",
            decoder="naive",
            txid_policy="forward_client",
            port_policy="random_at_boot",
            cd_policy="forward_and_cache",
            tcp_supported=False,
            edns_behavior="break_response",
            cname_merge=True,
        ),
        ForwarderProfile(
            name="dnrd-like",
            cache_model="qname_packet_map",
            decoder="naive",
            txid_policy="fresh_random",
            port_policy="random_per_query",
            cd_policy="clear_flag",
        ),
        ForwarderProfile(
            name="tenda-like",
            cache_model="qname_addr_map",
            decoder="naive",
            txid_policy="fresh_random",
            port_policy="time_seeded_at_boot",
            cd_policy="forward_and_cache",
            tcp_supported=False,
            cname_merge=True,
            daemon_start_delay=7,
        ),
        ForwarderProfile(
            name="dnsmasq-like",
            cache_model="record_cache",
            decoder="strict",
            txid_policy="fresh_random",
            port_policy="random_per_query",
            cd_policy="forward_no_cache",
            tcp_supported=True,
            version_bind="dnsmasq-2.78",
        ),
        ForwarderProfile(
            name="bintec-like",
            cache_model="record_cache",
            decoder="strict",
            alias_decoder="naive",
            txid_policy="fresh_random",
            port_policy="random_per_query",
            cd_policy="clear_flag",
            tcp_supported=False,
            cname_merge=True,
        ),
        ForwarderProfile(
            name="static-port-nocache",
            cache_model="none",
            decoder="strict",
            port_policy="static",
            static_port=1027,
            tcp_supported=False,
        ),
        ForwarderProfile(
            name="sequential-txid",
            cache_model="record_cache",
            txid_policy="sequential",
            sequential_start=1,
        ),
    )
}

# the four fixtures that mirror the results-table clusters
CORE_PROFILES = ("dproxy-like", "dnrd-like", "tenda-like", "dnsmasq-like")


def get_profile(name: str) -> ForwarderProfile:
    try:
        return BUILTIN_PROFILES[name]
    except KeyError:
        raise ProfileError(f"unknown profile {name!r}; built-ins: {sorted(BUILTIN_PROFILES)}") from None


# Profile files: one ``key = value`` per line, '#' starts a comment.

_CALL = re.compile(r"^(\w+)\((\d+)\)$")


def _parse_bool(value: str) -> bool:
    v = value.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ProfileError(f"not a boolean: {value!r}")


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ProfileError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def load_profile(text: str) -> ForwarderProfile:
    kv = parse_kv(text)
    if "base" in kv:
        base = asdict(get_profile(kv.pop("base")))
    else:
        base = {}
    known = {f.name: f for f in fields(ForwarderProfile)}
    for key, value in kv.items():
        if key not in known:
            raise ProfileError(f"unknown profile key {key!r}")
        m = _CALL.match(value)
        if key == "txid_policy" and m:
            value, base["sequential_start"] = m.group(1), int(m.group(2))
        elif key == "port_policy" and m:
            value, base["static_port"] = m.group(1), int(m.group(2))
        ftype = str(known[key].type)
        if "bool" in ftype:
            base[key] = _parse_bool(value)
        elif "int" in ftype:
            base[key] = int(value) if value else None
        else:
            base[key] = value or None if "Optional" in ftype else value
    return ForwarderProfile(**base)


def dump_profile(profile: ForwarderProfile) -> str:
    lines = []
    for f in fields(ForwarderProfile):
        value = getattr(profile, f.name)
        if f.name == "txid_policy" and value == "sequential":
            value = f"sequential({profile.sequential_start})"
        elif f.name == "port_policy" and value == "static":
            value = f"static({profile.static_port})"
        elif f.name in ("sequential_start", "static_port"):
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


# Policies


def boot_time_port(boot_unix_seconds: int) -> int:
    """Port chosen by a forwarder that seeds its PRNG from the clock at start.

    One step of the Lehmer generator ``x1 = 16807 * (seed + 1) mod (2**31 - 1)``
    mapped into the ephemeral range ``[49152, 65535]``.
    """
    if boot_unix_seconds < 0:
        raise ValueError("boot time must be non-negative")
    x1 = (_LEHMER_A * (int(boot_unix_seconds) + 1)) % _LEHMER_M
    return EPHEMERAL_BASE + x1 % 16384


@dataclass
class MapEntry:
    value: Union[str, bytes]
    inserted: float
    ttl: int

    def fresh(self, now: float) -> bool:
        return now < self.inserted + self.ttl


@dataclass
class CacheState:
    record_cache: RecordCache = field(default_factory=RecordCache)
    qname_addr: dict[bytes, MapEntry] = field(default_factory=dict)
    qname_packet: dict[bytes, MapEntry] = field(default_factory=dict)

    def clear(self):
        self.record_cache.clear()
        self.qname_addr.clear()
        self.qname_packet.clear()

    def populated(self) -> set[str]:
        out = set()
        if self.record_cache:
            out.add("record_cache")
        if self.qname_addr:
            out.add("qname_addr_map")
        if self.qname_packet:
            out.add("qname_packet_map")
        return out


@dataclass
class PendingQuery:
    client: Address
    client_txid: int
    upstream_txid: int
    port: int
    question: Question
    flat_name: bytes
    transport: str
    sent_at: float
    cd: bool = False
    had_opt: bool = False


@dataclass
class ForwarderState:
    rng: random.Random
    cache: CacheState = field(default_factory=CacheState)
    pending: dict[tuple[int, int], PendingQuery] = field(default_factory=dict)
    next_seq: int = 1
    boot_port: Optional[int] = None
    boot_count: int = 0
    last_port: Optional[int] = None
    stats: Counter = field(default_factory=Counter)


def select_txid(profile: ForwarderProfile, client_txid: int, state: ForwarderState) -> int:
    if profile.txid_policy == "forward_client":
        return client_txid
    if profile.txid_policy == "sequential":
        txid = state.next_seq
        state.next_seq = (txid + 1) & 0xFFFF
        return txid
    return state.rng.getrandbits(16)


def select_port(profile: ForwarderProfile, state: ForwarderState) -> int:
    if profile.port_policy == "random_per_query":
        in_use = {p for _, p in state.pending}
        while True:
            port = state.rng.randint(PORT_MIN, PORT_MAX)
            if port not in in_use:
                return port
    return state.boot_port


# Actions returned by the state machine


@dataclass(frozen=True)
class Respond:
    payload: bytes
    to: Address
    transport: str = "udp"


@dataclass(frozen=True)
class Forward:
    payload: bytes
    port: int
    upstream: Address


@dataclass(frozen=True)
class Drop:
    reason: str


Action = Union[Respond, Forward, Drop]


def _flat_key(name: DnsName) -> bytes:
    return name_to_naive_string(name).lower()


class Forwarder:
    """One emulated forwarder instance.

    ``clock`` returns the current time in seconds and drives cache expiry.
    Callers must serialize events per instance.
    """

    def __init__(
        self,
        profile: ForwarderProfile,
        *,
        upstream: Address = ("198.51.100.1", 53),
        seed: int = 0,
        clock: Optional[Callable[[], float]] = None,
        wall_clock: float = 0.0,
    ):
        self.profile = profile
        self.upstream = upstream
        self.clock = clock or (lambda: 0.0)
        self.state = ForwarderState(rng=random.Random(f"forwarder:{seed}"))
        self.reboot(wall_clock)

    # lifecycle

    def reboot(self, wall_clock: float = 0.0) -> None:
        """Power-cycle: caches and pending queries are lost, boot-time ports re-drawn."""
        p = self.profile
        st = self.state
        st.cache.clear()
        st.pending.clear()
        st.next_seq = p.sequential_start
        st.boot_count += 1
        if p.port_policy == "static":
            st.boot_port = p.static_port
        elif p.port_policy == "random_at_boot":
            st.boot_port = st.rng.randint(PORT_MIN, PORT_MAX)
        elif p.port_policy == "time_seeded_at_boot":
            device_clock = 0 if p.clock_reset_on_boot else int(wall_clock)
            st.boot_port = boot_time_port(device_clock + p.daemon_start_delay)
        else:
            st.boot_port = None

    @property
    def open_ports(self) -> set[int]:
        ports = {port for _, port in self.state.pending}
        if self.state.boot_port is not None:
            ports.add(self.state.boot_port)
        return ports

    # client side

    def handle_client_query(self, data: bytes, client: Address, transport: str = "udp") -> Action:
        p = self.profile
        if transport == "tcp":
            if not p.tcp_supported:
                self.state.stats["tcp_refused"] += 1
                return Drop("tcp not supported")
            try:
                data, _ = unframe(data)
            except DnsError:
                return Drop("bad tcp frame")
        try:
            msg = parse_message(data)
        except DnsError:
            return self._formerr(data, client, transport)
        if msg.qr or len(msg.question) != 1:
            return self._formerr(data, client, transport)
        q = msg.question[0]

        if p.version_bind and q.name == VERSION_BIND and q.rrclass == RRClass.CH and q.rrtype == RRType.TXT:
            reply = msg.reply(aa=True, ra=True)
            reply.answers.append(
                ResourceRecord(q.name, RRType.TXT, RRClass.CH, 0, (p.version_bind.encode(),))
            )
            return self._respond(serialize_message(reply), client, transport)

        hit = self._lookup(msg)
        if hit is not None:
            self.state.stats["cache_hit"] += 1
            return self._respond(hit, client, transport)

        st = self.state
        port = select_port(p, st)
        txid = select_txid(p, msg.txid, st)
        payload = self._upstream_payload(data, msg, txid)
        key = (txid, port)
        if key in st.pending:
            st.stats["pending_replaced"] += 1
        st.pending[key] = PendingQuery(
            client=client,
            client_txid=msg.txid,
            upstream_txid=txid,
            port=port,
            question=q,
            flat_name=_flat_key(q.name),
            transport=transport,
            sent_at=self.clock(),
            cd=msg.cd,
            had_opt=msg.opt is not None,
        )
        st.last_port = port
        st.stats["forwarded"] += 1
        return Forward(payload, port, self.upstream)

    def _respond(self, payload: bytes, client: Address, transport: str) -> Respond:
        return Respond(frame(payload) if transport == "tcp" else payload, client, transport)

    def _formerr(self, data: bytes, client: Address, transport: str) -> Action:
        if len(data) < 12:
            return Drop("runt query")
        reply = DnsMessage(txid=get_txid(data), qr=True, rcode=Rcode.FORMERR)
        return self._respond(serialize_message(reply), client, transport)

    def _upstream_payload(self, data: bytes, msg: DnsMessage, txid: int) -> bytes:
        # proxies forward the client's bytes; the name is never re-encoded
        if self.profile.edns_behavior == "strip" and msg.opt is not None:
            stripped = DnsMessage(**{**msg.__dict__})
            stripped.additional = [rr for rr in msg.additional if rr.rrtype != RRType.OPT]
            data = serialize_message(stripped)
        if self.profile.cd_policy == "clear_flag":
            data = clear_flag_bits(data, FLAG_CD | FLAG_AD)
        return set_txid(data, txid)

    # cache lookup

    def _key_name(self, name: DnsName, decoder: str) -> DnsName:
        if decoder == "naive":
            return DnsName.from_flat(name_to_naive_string(name))
        return name

    def _lookup(self, msg: DnsMessage) -> Optional[bytes]:
        model = self.profile.cache_model
        q = msg.question[0]
        now = self.clock()
        if model == "none":
            return None
        if model == "qname_addr_map":
            if q.rrtype != RRType.A or q.rrclass != RRClass.IN:
                return None
            entry = self.state.cache.qname_addr.get(_flat_key(q.name))
            if entry is None or not entry.fresh(now):
                return None
            reply = msg.reply(ra=True)
            reply.additional = []
            reply.answers.append(
                ResourceRecord(q.name, RRType.A, RRClass.IN, self.profile.synth_ttl, entry.value)
            )
            return serialize_message(reply)
        if model == "qname_packet_map":
            entry = self.state.cache.qname_packet.get(_flat_key(q.name))
            if entry is None or not entry.fresh(now):
                return None
            return set_txid(entry.value, msg.txid)
        return self._lookup_records(msg, now)

    def _lookup_records(self, msg: DnsMessage, now: float) -> Optional[bytes]:
        q = msg.question[0]
        cache = self.state.cache.record_cache
        key = self._key_name(q.name, self.profile.decoder)
        chain, entry = cache.lookup_chain(key, q.rrtype, now)
        if entry is None:
            return None
        reply = msg.reply(ra=True)
        reply.additional = []
        if entry.negative:
            reply.rcode = entry.rcode
            reply.answers = chain
            reply.authority = [entry.soa.with_ttl(entry.remaining(now))]
        else:
            ttl = entry.remaining(now)
            reply.answers = chain + [rr.with_ttl(ttl) for rr in entry.records]
        return serialize_message(reply)

    # upstream side

    def handle_upstream_response(self, data: bytes, src: Address, dst_port: int) -> Action:
        st = self.state
        if len(data) < 12:
            st.stats["runt_response"] += 1
            return Drop("runt response")
        if tuple(src) != tuple(self.upstream):
            st.stats["wrong_source"] += 1
            return Drop("unexpected source address")
        pending = st.pending.get((get_txid(data), dst_port))
        if pending is None:
            st.stats["challenge_mismatch"] += 1
            return Drop("no pending query for txid/port")
        try:
            resp = parse_message(data)
        except MalformedMessage as e:
            resp = e.partial
        if resp is None or not resp.qr:
            st.stats["bad_response"] += 1
            return Drop("not a response")
        if self.profile.cache_model == "record_cache" and self.profile.decoder == "strict":
            if [(q.name, q.rrtype) for q in resp.question] != [
                (pending.question.name, pending.question.rrtype)
            ]:
                st.stats["question_mismatch"] += 1
                return Drop("question mismatch")
        del st.pending[(pending.upstream_txid, pending.port)]
        st.stats["accepted"] += 1

        skip_cache = self.profile.cd_policy == "forward_no_cache" and (resp.cd or pending.cd)
        if not skip_cache:
            self._store(pending, resp, data)

        out = set_txid(data, pending.client_txid)
        if self.profile.edns_behavior == "break_response" and pending.had_opt:
            # header claims one more answer than the body holds
            ancount = int.from_bytes(out[6:8], "big") + 1
            out = out[:6] + (ancount & 0xFFFF).to_bytes(2, "big") + out[8:]
        return self._respond(out, pending.client, pending.transport)

    def _store(self, pending: PendingQuery, resp: DnsMessage, raw: bytes) -> None:
        model = self.profile.cache_model
        now = self.clock()
        cache = self.state.cache
        if model == "none" or not resp.question:
            return
        if model == "qname_addr_map":
            for rr in resp.answers:
                if rr.rrtype == RRType.A:
                    cache.qname_addr[_flat_key(resp.question[0].name)] = MapEntry(rr.rdata, now, rr.ttl)
                    return
            return
        if model == "qname_packet_map":
            if resp.rcode == Rcode.NOERROR and resp.answers:
                ttl = min(rr.ttl for rr in resp.answers)
                cache.qname_packet[_flat_key(resp.question[0].name)] = MapEntry(raw, now, ttl)
            return
        self._store_records(pending.question, resp, now)

    def _store_records(self, question: Question, resp: DnsMessage, now: float) -> None:
        if resp.rcode not in (Rcode.NOERROR, Rcode.NXDOMAIN):
            return
        cache = self.state.cache.record_cache
        qtype = question.rrtype
        decode = self.profile.answer_decoder
        current = self._key_name(question.name, self.profile.decoder)
        chain_names = [current]
        cnames = []
        for _ in range(8):
            step = [
                rr for rr in resp.answers
                if rr.rrtype == RRType.CNAME and self._key_name(rr.name, decode) == current
            ]
            if not step or qtype == RRType.CNAME:
                break
            target = self._key_name(step[0].rdata, decode)
            cnames.append(ResourceRecord(current, RRType.CNAME, step[0].rrclass, step[0].ttl, target))
            current = target
            chain_names.append(current)
        final = [
            rr for rr in resp.answers
            if rr.rrtype == qtype and self._key_name(rr.name, decode) == current
        ]
        if self.profile.cname_merge:
            if final:
                ttl = min(rr.ttl for rr in final)
                for name in chain_names:
                    cache.put(name, qtype, [replace(rr, name=name) for rr in final], ttl, now)
            return
        for rr in cnames:
            cache.put(rr.name, RRType.CNAME, [rr], rr.ttl, now)
        if final:
            cache.put(current, qtype, [replace(rr, name=current) for rr in final],
                      min(rr.ttl for rr in final), now)
        else:
            soa = next((rr for rr in resp.authority if rr.rrtype == RRType.SOA), None)
            if soa is not None:
                cache.put_negative(current, qtype, soa, resp.rcode, now)


# NAT-rule forwarding: no DNS processing at all


class NatTable:
    """Source-port rewriting for a NAT forwarding rule."""

    def __init__(self, wan_host: str, rng: random.Random):
        self.wan_host = wan_host
        self.rng = rng
        self.out: dict[Address, int] = {}
        self.back: dict[int, Address] = {}

    def outbound_port(self, client: Address) -> int:
        port = self.out.get(client)
        if port is None:
            while True:
                port = self.rng.randint(PORT_MIN, PORT_MAX)
                if port not in self.back:
                    break
            self.out[client] = port
            self.back[port] = client
        return port


def nat_rule_forward(packet: Packet, upstream: Address, nat: Optional[NatTable] = None) -> Packet:
    """Rewrite the envelope of a client DNS packet towards the upstream resolver.

    The payload is passed through byte-for-byte.
    """
    src = packet.src
    if nat is not None:
        src = (nat.wan_host, nat.outbound_port(packet.src))
    return Packet(src, upstream, packet.payload, packet.transport)


class NatRouter:
    """A router whose DNS 'forwarder' is only a destination-NAT rule."""

    def __init__(self, lan: Address, wan_host: str, upstream: Address, seed: int = 0):
        self.lan = lan
        self.upstream = upstream
        self.nat = NatTable(wan_host, random.Random(f"nat:{seed}"))
        self.profile = None

    @property
    def open_ports(self) -> set[int]:
        return set(self.nat.back)

    def receive(self, net, packet: Packet) -> None:
        if packet.dst == self.lan:
            out = nat_rule_forward(packet, self.upstream, self.nat)
            net.sync_ports(self.nat.wan_host, self.open_ports, self)
            net.send(out)
        elif packet.dst[0] == self.nat.wan_host:
            client = self.nat.back.get(packet.dst[1])
            if client is not None:
                net.send(Packet(self.lan, client, packet.payload, packet.transport))

    def reboot(self, wall_clock: float = 0.0) -> None:
        self.nat.out.clear()
        self.nat.back.clear()


class ForwarderNode:
    """Attach a :class:`Forwarder` to a :class:`~fwdlab.netsim.SimNetwork`."""

    def __init__(self, forwarder: Forwarder, lan: Address, wan_host: str):
        self.forwarder = forwarder
        self.lan = lan
        self.wan_host = wan_host
        self.actions: list[Action] = []

    @property
    def profile(self):
        return self.forwarder.profile

    def receive(self, net, packet: Packet) -> None:
        if packet.dst == self.lan:
            action = self.forwarder.handle_client_query(packet.payload, packet.src, packet.transport)
        else:
            action = self.forwarder.handle_upstream_response(packet.payload, packet.src, packet.dst[1])
        self._apply(net, action)

    def _apply(self, net, action: Action) -> None:
        if isinstance(action, Forward):
            net.sync_ports(self.wan_host, self.forwarder.open_ports, self)
            net.send(Packet((self.wan_host, action.port), action.upstream, action.payload))
        elif isinstance(action, Respond):
            net.sync_ports(self.wan_host, self.forwarder.open_ports, self)
            net.send(Packet(self.lan, action.to, action.payload, action.transport))

    def reboot(self, net, wall_clock: float = 0.0) -> None:
        self.forwarder.reboot(wall_clock)
        net.sync_ports(self.wan_host, self.forwarder.open_ports, self)
