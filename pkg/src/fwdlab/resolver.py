"""
Upstream recursive resolver and client stub resolver.

The recursive resolver does not walk down from the root: each zone apex is
mapped to the address of its authoritative server and the deepest match
is asked. DNSSEC is abstract. Every answer record from a zone listed in
``signed_zones`` must come with a valid placeholder signature.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

from .cache import RecordCache
from .netsim import Address, Packet
from .wire import (
    DnsError,
    DnsMessage,
    DnsName,
    MalformedMessage,
    Rcode,
    ResourceRecord,
    RRClass,
    RRType,
    as_name,
    make_query,
    parse_message,
    serialize_message,
    signature_status,
)

MAX_CNAME_DEPTH = 8


@dataclass(frozen=True)
class RecursiveConfig:
    validate_dnssec: bool = True
    honor_cd: bool = True
    negative_cache: bool = True


@dataclass(frozen=True)
class StubConfig:
    chase_incomplete_cname: bool = True
    max_chase_depth: int = 4
    timeout: float = 2.0
    retries: int = 1

    def __post_init__(self):
        if self.chase_incomplete_cname and self.max_chase_depth < 1:
            raise ValueError("max_chase_depth must be at least 1 when chasing")


Ask = Callable[[Address, bytes], Optional[bytes]]


class _Fail(Exception):
    def __init__(self, rcode: int, why: str):
        super().__init__(why)
        self.rcode = rcode


class RecursiveResolver:
    """Iterative-in-spirit resolver with a record cache.

    ``ask(server, payload)`` performs one exchange with an authoritative
    server and returns its reply bytes (or ``None`` on timeout).
    """

    def __init__(
        self,
        config: RecursiveConfig = RecursiveConfig(),
        delegations: Optional[dict] = None,
        *,
        signed_zones: Iterable = (),
        ask: Optional[Ask] = None,
        clock: Optional[Callable[[], float]] = None,
        seed: int = 0,
    ):
        self.config = config
        self.delegations = {as_name(k): v for k, v in (delegations or {}).items()}
        self.signed_zones = [as_name(z) for z in signed_zones]
        self.ask = ask
        self.clock = clock or (lambda: 0.0)
        self.cache = RecordCache()
        self.rng = random.Random(f"recursive:{seed}")
        self.upstream_queries: list[tuple[DnsName, int]] = []

    def server_for(self, name: DnsName) -> Optional[Address]:
        best = None
        for apex, addr in self.delegations.items():
            if name.is_subdomain_of(apex) and (best is None or len(apex) > len(best[0])):
                best = (apex, addr)
        return best[1] if best else None

    def is_signed(self, name: DnsName) -> bool:
        return any(name.is_subdomain_of(z) for z in self.signed_zones)

    def resolve(self, query: DnsMessage) -> DnsMessage:
        reply = query.reply(ra=True)
        if query.opt is not None:
            reply.additional = [query.opt]
        if len(query.question) != 1:
            reply.rcode = Rcode.FORMERR
            return reply
        q = query.question[0]
        if q.rrclass != RRClass.IN:
            reply.rcode = Rcode.REFUSED
            return reply
        skip = self.config.validate_dnssec and self.config.honor_cd and query.cd
        try:
            answers, authority, rcode, validated = self._resolve(q.name, q.rrtype, skip)
        except _Fail as f:
            reply.rcode = f.rcode
            return reply
        reply.answers = answers
        reply.authority = authority
        reply.rcode = rcode
        reply.ad = validated and not skip and bool(answers)
        return reply

    def _resolve(self, qname: DnsName, qtype: int, skip: bool):
        now = self.clock()
        chain: list[ResourceRecord] = []
        current = qname
        all_signed = True
        for _ in range(MAX_CNAME_DEPTH + 1):
            entry = self.cache.get(current, qtype, now)
            if entry is not None:
                if entry.negative:
                    return chain, [entry.soa.with_ttl(entry.remaining(now))], entry.rcode, False
                return chain + [r.with_ttl(entry.remaining(now)) for r in entry.records], [], Rcode.NOERROR, False
            alias = self.cache.get(current, RRType.CNAME, now) if qtype != RRType.CNAME else None
            if alias is not None:
                chain.append(alias.records[0].with_ttl(alias.remaining(now)))
                current = alias.records[0].rdata
                all_signed = False
                continue

            resp = self._ask(current, qtype)
            if resp.rcode not in (Rcode.NOERROR, Rcode.NXDOMAIN):
                raise _Fail(Rcode.SERVFAIL, f"authoritative said {resp.rcode}")
            signed = self.is_signed(current)
            if signed and self.config.validate_dnssec and not skip:
                self._validate(current, resp)
            all_signed &= signed
            cache_ok = not skip
            # bailiwick: only records owned by the name we asked about
            owned = [r for r in resp.answers if r.name == current and r.rrtype != RRType.RRSIG]
            direct = [r for r in owned if r.rrtype == qtype]
            if direct:
                if cache_ok:
                    self.cache.put(current, qtype, direct, min(r.ttl for r in direct), now)
                return chain + direct, [], Rcode.NOERROR, all_signed
            cname = next((r for r in owned if r.rrtype == RRType.CNAME), None)
            if cname is not None and qtype != RRType.CNAME:
                if cache_ok:
                    self.cache.put(current, RRType.CNAME, [cname], cname.ttl, now)
                chain.append(cname)
                current = cname.rdata
                continue
            soa = next((r for r in resp.authority if r.rrtype == RRType.SOA), None)
            if soa is not None and cache_ok and self.config.negative_cache:
                self.cache.put_negative(current, qtype, soa, resp.rcode, now)
            return chain, [soa] if soa is not None else [], resp.rcode, False
        raise _Fail(Rcode.SERVFAIL, "CNAME chain too long")

    def _validate(self, name: DnsName, resp: DnsMessage) -> None:
        sigs = {}
        for r in resp.answers:
            if r.rrtype == RRType.RRSIG and r.name == name:
                covered, valid = signature_status(r)
                sigs[covered] = sigs.get(covered, True) and valid
        for r in resp.answers:
            if r.rrtype == RRType.RRSIG or r.name != name:
                continue
            if not sigs.get(r.rrtype, False):
                raise _Fail(Rcode.SERVFAIL, f"bogus or unsigned {r.name} {r.rrtype}")

    def _ask(self, name: DnsName, qtype: int) -> DnsMessage:
        server = self.server_for(name)
        if server is None or self.ask is None:
            raise _Fail(Rcode.SERVFAIL, f"no server for {name}")
        query = make_query(name, qtype, self.rng.getrandbits(16), rd=False)
        self.upstream_queries.append((name, qtype))
        data = self.ask(server, serialize_message(query))
        if data is None:
            raise _Fail(Rcode.SERVFAIL, "authoritative timed out")
        try:
            resp = parse_message(data)
        except DnsError:
            raise _Fail(Rcode.SERVFAIL, "unparsable authoritative reply") from None
        if resp.txid != query.txid or not resp.qr:
            raise _Fail(Rcode.SERVFAIL, "mismatched authoritative reply")
        return resp

    def handle(self, data: bytes) -> Optional[bytes]:
        try:
            query = parse_message(data)
        except DnsError:
            if len(data) < 12:
                return None
            return serialize_message(DnsMessage(txid=int.from_bytes(data[:2], "big"), qr=True, rcode=Rcode.FORMERR))
        if query.qr:
            return None
        return serialize_message(self.resolve(query))


class RecursiveNode:
    """Put a :class:`RecursiveResolver` on a simulated network.

    Authoritative traffic goes through :meth:`SimNetwork.rpc`, so on-path
    middleboxes see it. Replies to clients leave after ``reply_delay``.
    """

    def __init__(self, net, addr: Address, resolver: RecursiveResolver, reply_delay: Optional[float] = None):
        self.net = net
        self.addr = addr
        self.resolver = resolver
        self.reply_delay = reply_delay
        self._port = 40000
        resolver.ask = self._ask
        resolver.clock = lambda: net.now
        net.bind(addr, self)

    def _ask(self, server: Address, payload: bytes) -> Optional[bytes]:
        self._port = 40000 + (self._port - 40000 + 1) % 20000
        return self.net.rpc((self.addr[0], self._port), server, payload)

    def receive(self, net, packet: Packet) -> None:
        out = self.resolver.handle(packet.payload)
        if out is not None:
            net.send(Packet(self.addr, packet.src, out), delay=self.reply_delay)


# Stub side


class StubError(Exception):
    pass


class Timeout(StubError):
    pass


class NoAddress(StubError):
    def __init__(self, message: str, response: Optional[DnsMessage] = None):
        super().__init__(message)
        self.response = response


class ChaseDepthExceeded(StubError):
    pass


def cname_terminal(name: DnsName, answers: list[ResourceRecord]) -> DnsName:
    current = name
    for _ in range(MAX_CNAME_DEPTH * 2):
        step = next((r for r in answers if r.rrtype == RRType.CNAME and r.name == current), None)
        if step is None:
            break
        current = step.rdata
    return current


def addresses(msg: DnsMessage, rrtype: int = RRType.A) -> list[str]:
    return [r.rdata for r in msg.answers if r.rrtype == rrtype]


class StubResolver:
    """A client stub talking to one server through ``endpoint``.

    ``endpoint.exchange(payload, timeout)`` returns reply bytes or ``None``.
    Every name the stub asked for is kept in ``queries``.
    """

    def __init__(self, config: StubConfig, endpoint, rng: Optional[random.Random] = None):
        self.config = config
        self.endpoint = endpoint
        self.rng = rng or random.Random(0)
        self.queries: list[DnsName] = []
        self.responses: list[DnsMessage] = []

    def query(self, name: DnsName, rrtype: int = RRType.A) -> DnsMessage:
        msg = make_query(name, rrtype, self.rng.getrandbits(16))
        payload = serialize_message(msg)
        self.queries.append(name)
        for _ in range(1 + self.config.retries):
            data = self.endpoint.exchange(payload, timeout=self.config.timeout)
            if data is None:
                continue
            try:
                resp = parse_message(data)
            except MalformedMessage as e:
                if e.partial is None:
                    continue
                resp = e.partial
            except DnsError:
                continue
            if resp.txid != msg.txid:
                continue
            self.responses.append(resp)
            return resp
        raise Timeout(f"no answer for {name}")

    def lookup(self, name, rrtype: int = RRType.A) -> str:
        name = as_name(name)
        chases = 0
        while True:
            resp = self.query(name, rrtype)
            if resp.rcode != Rcode.NOERROR:
                raise NoAddress(f"{name}: rcode {resp.rcode}", resp)
            terminal = cname_terminal(name, resp.answers)
            found = [r.rdata for r in resp.answers if r.rrtype == rrtype and r.name == terminal]
            if found:
                return found[0]
            if terminal != name:
                if not self.config.chase_incomplete_cname:
                    raise NoAddress(f"{name}: chain ends at {terminal} without an address", resp)
                if chases >= self.config.max_chase_depth:
                    raise ChaseDepthExceeded(f"gave up after {chases} follow-up queries")
                # the alias target goes out exactly as decoded, raw bytes and all
                chases += 1
                name = terminal
                continue
            loose = addresses(resp, rrtype)
            if loose:
                return loose[0]
            raise NoAddress(f"{name}: no address in answer", resp)


def stub_lookup(config: StubConfig, endpoint, name, rng: Optional[random.Random] = None) -> str:
    return StubResolver(config, endpoint, rng).lookup(name)
