"""
Scripted authoritative nameserver.

A zone script lists records together with an answer schedule: which answer
the n-th query for a name receives. This is how the server tells apart the
recursive resolver's first lookup of an alias target (answered empty, with
an uncacheable SOA) from the second one (answered with the injected record).

Script syntax, one record per line::

    $ORIGIN test.com.
    $SIGNED
    *.zero.test.com. 300 IN CNAME *.www.target.com\\000.test.com.
    victim\\.name.test.com. 0 IN SOA ns. host. 1 60 60 60 0 | qtype=A step=1 once authority
    victim\\.name.test.com. 300 IN A 6.6.6.6 | step=2

A leading ``*`` label in an owner matches exactly one label of the query
name; the same label replaces a leading ``*`` in CNAME/NS/PTR targets.
Directives after ``|``: ``step=N`` (1-based schedule position, default 1),
``once``/``forever`` (default forever), ``qtype=T`` (the query type the line
answers, default its own type), ``authority`` (put the record in the
authority section) and ``bogus`` (carry an invalid signature in a signed
zone). The last step of every schedule repeats forever.
"""

from __future__ import annotations

import ipaddress
import random
import re
import string
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

from .netsim import Packet
from .wire import (
    DnsError,
    DnsMessage,
    DnsName,
    NameTooLong,
    Rcode,
    ResourceRecord,
    RRClass,
    RRType,
    Soa,
    as_name,
    class_from_text,
    class_name,
    make_signature,
    name_from_presentation,
    name_to_presentation,
    parse_message,
    rdata_to_text,
    serialize_message,
    type_from_text,
    type_name,
)

WILDCARD = b"*"
PROBE_ALPHABET = string.ascii_lowercase + string.digits
PROBE_LENGTH = 12


class ParseError(ValueError):
    def __init__(self, message: str, lineno: int = 0):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.lineno = lineno


@dataclass
class AnswerStep:
    answers: list[ResourceRecord] = field(default_factory=list)
    authority: list[ResourceRecord] = field(default_factory=list)
    repeat: str = "forever"


@dataclass
class ScriptEntry:
    owner: DnsName
    rrtype: int
    schedule: list[AnswerStep]
    bogus: bool = False

    @property
    def is_wildcard(self) -> bool:
        return bool(self.owner.labels) and self.owner.labels[0] == WILDCARD

    def capture(self, qname: DnsName) -> Optional[bytes]:
        """Return the label matched by the wildcard, ``b''`` on an exact match,
        ``None`` if the entry does not apply."""
        if not self.is_wildcard:
            return b"" if qname == self.owner else None
        if len(qname.labels) != len(self.owner.labels):
            return None
        if qname.key()[1:] != self.owner.key()[1:]:
            return None
        return qname.labels[0]

    def step_for(self, arrival: int) -> AnswerStep:
        n = arrival
        for step in self.schedule:
            if step.repeat == "forever":
                return step
            if n == 0:
                return step
            n -= 1
        return self.schedule[-1]


def default_soa(apex: DnsName, minimum: int = 0, ttl: int = 0) -> ResourceRecord:
    return ResourceRecord(
        apex,
        RRType.SOA,
        RRClass.IN,
        ttl,
        Soa(apex.prepend(b"ns"), apex.prepend(b"hostmaster"), 1, 3600, 600, 86400, minimum),
    )


@dataclass
class ZoneScript:
    apex: DnsName
    entries: list[ScriptEntry] = field(default_factory=list)
    signed: bool = False
    soa: Optional[ResourceRecord] = None

    def __post_init__(self):
        if self.soa is None:
            self.soa = default_soa(self.apex)
        for e in self.entries:
            self._check(e)

    def _check(self, entry: ScriptEntry):
        if not entry.owner.is_subdomain_of(self.apex):
            raise ParseError(f"owner {entry.owner} is outside the zone {self.apex}")
        if not entry.schedule:
            raise ParseError(f"entry {entry.owner} has an empty schedule")
        entry.schedule[-1].repeat = "forever"

    def add(self, entry: ScriptEntry) -> None:
        self._check(entry)
        self.entries.append(entry)

    def find(self, qname: DnsName, qtype: int) -> tuple[Optional[ScriptEntry], bytes, bool]:
        """Pick the entry answering ``(qname, qtype)``.

        Returns ``(entry, capture, owner_exists)``. Exact owners win over
        wildcards; a CNAME entry answers any type its owner lacks.
        """
        best = None
        owner_exists = False
        for exact in (True, False):
            for e in self.entries:
                if e.is_wildcard == exact:
                    continue
                cap = e.capture(qname)
                if cap is None:
                    continue
                owner_exists = True
                if e.rrtype == qtype:
                    return e, cap, True
                if e.rrtype == RRType.CNAME and qtype != RRType.CNAME and best is None:
                    best = (e, cap)
            if best is not None:
                return best[0], best[1], True
            if owner_exists:
                break
        return None, b"", owner_exists


class QueryCounter:
    """Arrivals per (query name, query type), case-folded."""

    def __init__(self):
        self._counts: dict[tuple, int] = defaultdict(int)

    def bump(self, name: DnsName, rrtype: int) -> int:
        key = (name.key(), rrtype)
        n = self._counts[key]
        self._counts[key] = n + 1
        return n

    def get(self, name: DnsName, rrtype: int) -> int:
        return self._counts.get((name.key(), rrtype), 0)

    def reset(self) -> None:
        self._counts.clear()


def _substitute(rr: ResourceRecord, qname: DnsName, capture: bytes) -> ResourceRecord:
    rdata = rr.rdata
    if capture and rr.rrtype in (RRType.CNAME, RRType.NS, RRType.PTR) and rdata.labels[:1] == (WILDCARD,):
        rdata = DnsName((capture,) + rdata.labels[1:])
    owner = qname if rr.name.labels[:1] == (WILDCARD,) or rr.name == qname else rr.name
    return replace(rr, name=owner, rdata=rdata)


def _signed(records: list[ResourceRecord], valid: bool) -> list[ResourceRecord]:
    first: dict[tuple, ResourceRecord] = {}
    for rr in records:
        first.setdefault((rr.name, rr.rrtype), rr)
    return list(records) + [make_signature(rr, valid) for rr in first.values()]


def authoritative_answer(zone: ZoneScript, counters: QueryCounter, query: DnsMessage) -> DnsMessage:
    reply = query.reply(aa=True)
    reply.rd = query.rd
    if len(query.question) != 1:
        reply.aa = False
        reply.rcode = Rcode.FORMERR
        return reply
    q = query.question[0]
    if q.rrclass != RRClass.IN or not q.name.is_subdomain_of(zone.apex):
        reply.aa = False
        reply.rcode = Rcode.REFUSED
        return reply
    entry, capture, owner_exists = zone.find(q.name, q.rrtype)
    if entry is None:
        reply.rcode = Rcode.NOERROR if owner_exists else Rcode.NXDOMAIN
        reply.authority = [zone.soa]
        return reply
    arrival = counters.bump(q.name, q.rrtype)
    step = entry.step_for(arrival)
    answers = [_substitute(rr, q.name, capture) for rr in step.answers]
    authority = [_substitute(rr, q.name, capture) for rr in step.authority]
    if not answers and not authority:
        authority = [zone.soa]
    if zone.signed and answers:
        answers = _signed(answers, valid=not entry.bogus)
    reply.answers = answers
    reply.authority = authority
    return reply


# Script text


_COMMENT = re.compile(r"(^|\s);.*$")
_DIRECTIVE = re.compile(r"^(step|qtype)=(\S+)$")
_TXT_STRING = re.compile(r'"((?:[^"\\]|\\.)*)"')


def _txt_unescape(s: str) -> bytes:
    out = bytearray()
    raw = s.encode("utf-8")
    i = 0
    while i < len(raw):
        c = raw[i]
        if c == 0x5C and i + 1 < len(raw):
            if raw[i + 1 : i + 4].isdigit() and len(raw[i + 1 : i + 4]) == 3:
                out.append(int(raw[i + 1 : i + 4]))
                i += 4
                continue
            out.append(raw[i + 1])
            i += 2
            continue
        out.append(c)
        i += 1
    return bytes(out)


def rdata_from_text(rrtype: int, text: str, origin: Optional[DnsName] = None):
    text = text.strip()
    if rrtype in (RRType.A, RRType.AAAA):
        addr = ipaddress.IPv4Address(text) if rrtype == RRType.A else ipaddress.IPv6Address(text)
        return str(addr)
    if rrtype in (RRType.CNAME, RRType.NS, RRType.PTR):
        return _absolute(text, origin)
    if rrtype == RRType.SOA:
        parts = text.split()
        if len(parts) != 7:
            raise ValueError("SOA needs mname rname serial refresh retry expire minimum")
        return Soa(_absolute(parts[0], origin), _absolute(parts[1], origin), *map(int, parts[2:]))
    if rrtype == RRType.TXT:
        strings = _TXT_STRING.findall(text)
        if not strings:
            raise ValueError("TXT rdata needs at least one quoted string")
        return tuple(_txt_unescape(s) for s in strings)
    if text.startswith("\\#"):
        parts = text.split()
        data = bytes.fromhex("".join(parts[2:]))
        if len(data) != int(parts[1]):
            raise ValueError("opaque rdata length mismatch")
        return data
    raise ValueError(f"no text form for type {type_name(rrtype)}")


def _absolute(text: str, origin: Optional[DnsName]) -> DnsName:
    if text == "@" and origin is not None:
        return origin
    unescaped_trailing_dot = text.endswith(".") and not text.endswith("\\.")
    name = name_from_presentation(text)
    if unescaped_trailing_dot or origin is None or text == ".":
        return name
    return DnsName(name.labels + origin.labels)


def load_zone_script(text: str) -> ZoneScript:
    apex = None
    signed = False
    soa = None
    grouped: dict[tuple, dict] = {}
    order = []
    for lineno, line in enumerate(text.splitlines(), 1):
        body = _COMMENT.sub("", line).strip()
        if not body:
            continue
        if body.startswith("$"):
            parts = body.split()
            if parts[0] == "$ORIGIN" and len(parts) == 2:
                try:
                    apex = name_from_presentation(parts[1])
                except DnsError as e:
                    raise ParseError(str(e), lineno) from None
            elif parts[0] == "$SIGNED":
                signed = True
            else:
                raise ParseError(f"unknown directive {parts[0]}", lineno)
            continue
        if apex is None:
            raise ParseError("record before $ORIGIN", lineno)
        record_text, _, directive_text = body.partition("|")
        fields = record_text.split(None, 4)
        if len(fields) != 5:
            raise ParseError("expected: owner TTL CLASS TYPE rdata", lineno)
        owner_text, ttl_text, class_text, type_text, rdata_text = fields
        try:
            owner = _absolute(owner_text, apex)
            ttl = int(ttl_text)
            rrclass = class_from_text(class_text)
            rrtype = type_from_text(type_text)
            rdata = rdata_from_text(rrtype, rdata_text, apex)
        except (ValueError, DnsError) as e:
            raise ParseError(str(e), lineno) from None
        step_no, repeat, qtype, authority, bogus = 1, None, rrtype, False, False
        for token in directive_text.split():
            m = _DIRECTIVE.match(token)
            if m and m.group(1) == "step":
                step_no = int(m.group(2))
                if step_no < 1:
                    raise ParseError("step numbers start at 1", lineno)
            elif m and m.group(1) == "qtype":
                try:
                    qtype = type_from_text(m.group(2))
                except ValueError as e:
                    raise ParseError(str(e), lineno) from None
            elif token in ("once", "forever"):
                repeat = token
            elif token == "authority":
                authority = True
            elif token == "bogus":
                bogus = True
            else:
                raise ParseError(f"unknown step directive {token!r}", lineno)
        rr = ResourceRecord(owner, rrtype, rrclass, ttl, rdata)
        if rrtype == RRType.SOA and owner == apex and not directive_text.strip():
            soa = rr
            continue
        key = (owner, qtype)
        if key not in grouped:
            grouped[key] = {"steps": {}, "bogus": False, "lineno": lineno}
            order.append(key)
        g = grouped[key]
        g["bogus"] |= bogus
        step = g["steps"].setdefault(step_no, AnswerStep(repeat=repeat or "forever"))
        if repeat:
            step.repeat = repeat
        (step.authority if authority else step.answers).append(rr)
    if apex is None:
        raise ParseError("no $ORIGIN: a zone script needs an apex")
    entries = []
    for owner, qtype in order:
        g = grouped[(owner, qtype)]
        numbers = sorted(g["steps"])
        if numbers != list(range(1, len(numbers) + 1)):
            raise ParseError(f"steps for {owner} are not contiguous from 1", g["lineno"])
        entries.append(ScriptEntry(owner, qtype, [g["steps"][n] for n in numbers], g["bogus"]))
    try:
        return ZoneScript(apex, entries, signed, soa)
    except ParseError as e:
        raise ParseError(str(e), 0) from None


def dump_zone_script(zone: ZoneScript) -> str:
    lines = [f"$ORIGIN {name_to_presentation(zone.apex)}"]
    if zone.signed:
        lines.append("$SIGNED")
    lines.append(_record_line(zone.soa))
    for e in zone.entries:
        for i, step in enumerate(e.schedule, 1):
            section = [(rr, False) for rr in step.answers] + [(rr, True) for rr in step.authority]
            if not section:
                section = [(replace(zone.soa, name=e.owner), True)]
            for rr, in_authority in section:
                directives = [f"step={i}", step.repeat]
                if rr.rrtype != e.rrtype:
                    directives.append(f"qtype={type_name(e.rrtype)}")
                if in_authority:
                    directives.append("authority")
                if e.bogus:
                    directives.append("bogus")
                lines.append(_record_line(rr) + " | " + " ".join(directives))
    return "\n".join(lines) + "\n"


def _record_line(rr: ResourceRecord) -> str:
    return (
        f"{name_to_presentation(rr.name)} {rr.ttl} {class_name(rr.rrclass)} "
        f"{type_name(rr.rrtype)} {rdata_to_text(rr.rrtype, rr.rdata)}"
    )


# Built-in scripts


def _common_apex(a: DnsName, b: DnsName) -> DnsName:
    ka, kb = a.key()[::-1], b.key()[::-1]
    n = 0
    while n < min(len(ka), len(kb)) and ka[n] == kb[n]:
        n += 1
    if n == 0:
        raise ValueError(f"{a} and {b} share no parent zone")
    return DnsName(a.labels[len(a.labels) - n :])


def injection_zone_text(test: str = "test.com", target: str = "target.com", ttl: int = 300) -> str:
    """The four special-character payloads, their clean baselines, and a
    badly signed name for the checking-disabled test.

    ``test`` is the attacker's zone, ``target`` the zone whose ``www`` name
    is to be injected. Both are served from their common parent so that a
    single server answers for both.
    """
    t = as_name(test)
    g = as_name(target)
    apex = _common_apex(t, g)
    T = name_to_presentation(t)
    www = name_to_presentation(g.prepend(b"www"))
    www_zero = name_to_presentation(DnsName((b"www",) + g.labels[:-1] + (g.labels[-1] + b"\x00",) + t.labels))
    www_dot = name_to_presentation(DnsName((b"www." + b".".join(g.labels[:-1]),) + g.labels[-1:]))
    lines = [
        f"$ORIGIN {name_to_presentation(apex)}",
        "$SIGNED",
        "; (1) alias into a name carrying a zero byte",
        f"*.zero.{T} {ttl} IN CNAME *.{www_zero}",
        "; (2) the record hiding behind the zero byte",
        f"*.{www_zero} {ttl} IN A 6.6.6.6",
        "; (3) alias into a label carrying a dot",
        f"*.dot.{T} {ttl} IN CNAME *.{www_dot}",
        "; (4) the record hiding behind the dot",
        f"*.{www_dot} {ttl} IN A 6.6.6.6",
        "; baselines",
        f"*.{www} {ttl} IN A 1.1.1.1",
        f"*.cname.{T} {ttl} IN CNAME *.{www}",
        "; badly signed record",
        f"*.dnssec.{T} {ttl} IN A 6.6.6.6 | bogus",
    ]
    return "\n".join(lines) + "\n"


def injection_zone(test: str = "test.com", target: str = "target.com", ttl: int = 300) -> ZoneScript:
    return load_zone_script(injection_zone_text(test, target, ttl))


def incomplete_cname_zone_text(
    attacker: str = "attacker.com",
    victim: str = "www.victim.com",
    address: str = "6.6.6.6",
    trigger: str = "sub",
    ttl: int = 300,
) -> str:
    """Zone for the chase-triggered injection.

    ``*.<trigger>.<attacker>`` aliases to ``<victim>\\000.<attacker>``. The
    first lookup of that alias target gets an empty answer whose SOA has
    minimum 0 (so nobody caches the absence); every later lookup gets the
    malicious address.
    """
    a = as_name(attacker)
    v = as_name(victim)
    hidden = DnsName(v.labels[:-1] + (v.labels[-1] + b"\x00",) + a.labels)
    H = name_to_presentation(hidden)
    A = name_to_presentation(a)
    return "\n".join(
        [
            f"$ORIGIN {A}",
            f"*.{trigger}.{A} {ttl} IN CNAME {H}",
            f"{H} 0 IN SOA ns.{A} hostmaster.{A} 1 3600 600 86400 0 | qtype=A step=1 once authority",
            f"{H} {ttl} IN A {address} | step=2 forever",
        ]
    ) + "\n"


def static_zone_text(apex: str, records: Sequence[tuple[str, int, str]], signed: bool = False) -> str:
    """A plain zone of ``(owner, ttl, address)`` A records."""
    A = name_to_presentation(as_name(apex))
    lines = [f"$ORIGIN {A}"]
    if signed:
        lines.append("$SIGNED")
    for owner, ttl, addr in records:
        lines.append(f"{name_to_presentation(as_name(owner))} {ttl} IN A {addr}")
    return "\n".join(lines) + "\n"


def randomized_probe_name(base, rng: random.Random) -> DnsName:
    """Prepend one random 12-character label so each probe misses every cache."""
    base = as_name(base)
    label = "".join(rng.choice(PROBE_ALPHABET) for _ in range(PROBE_LENGTH)).encode()
    if base.wire_length + PROBE_LENGTH + 1 > 255:
        raise NameTooLong(f"{base} has no room for a {PROBE_LENGTH}-byte prefix")
    return base.prepend(label)


# Server


class AuthoritativeServer:
    """Serves one or more zone scripts; the deepest matching apex wins."""

    def __init__(self, zones: Sequence[ZoneScript] = ()):
        self.zones = list(zones)
        self.counters = {id(z): QueryCounter() for z in self.zones}
        self.served = 0

    def add_zone(self, zone: ZoneScript) -> None:
        self.zones.append(zone)
        self.counters[id(zone)] = QueryCounter()

    def reload(self) -> None:
        for c in self.counters.values():
            c.reset()

    def zone_for(self, name: DnsName) -> Optional[ZoneScript]:
        best = None
        for z in self.zones:
            if name.is_subdomain_of(z.apex) and (best is None or len(z.apex) > len(best.apex)):
                best = z
        return best

    def answer(self, query: DnsMessage) -> DnsMessage:
        self.served += 1
        zone = self.zone_for(query.question[0].name) if len(query.question) == 1 else None
        if zone is None:
            reply = query.reply()
            reply.rcode = Rcode.REFUSED if query.question else Rcode.FORMERR
            return reply
        return authoritative_answer(zone, self.counters[id(zone)], query)

    def handle(self, data: bytes) -> Optional[bytes]:
        try:
            query = parse_message(data)
        except DnsError:
            if len(data) < 12:
                return None
            return serialize_message(
                DnsMessage(txid=int.from_bytes(data[:2], "big"), qr=True, rcode=Rcode.FORMERR)
            )
        if query.qr:
            return None
        return serialize_message(self.answer(query))

    # network node interface

    def serve(self, net, packet) -> Optional[bytes]:
        return self.handle(packet.payload)

    def receive(self, net, packet) -> None:
        out = self.handle(packet.payload)
        if out is not None:
            net.send(Packet(packet.dst, packet.src, out))
