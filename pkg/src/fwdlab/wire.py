"""
DNS wire format.

Names are kept as raw label bytes so that a label may legally contain
``0x00`` or ``.``; turning a name into a flat C-like string is a separate,
explicit step (:func:`name_to_naive_string`) that the vulnerable forwarder
models use.

Compression pointers are accepted when parsing and never emitted.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Optional, Union


class RRType(IntEnum):
    A = 1
    NS = 2
    CNAME = 5
    SOA = 6
    PTR = 12
    TXT = 16
    AAAA = 28
    OPT = 41
    RRSIG = 46
    ANY = 255


class RRClass(IntEnum):
    IN = 1
    CH = 3
    ANY = 255


class Rcode(IntEnum):
    NOERROR = 0
    FORMERR = 1
    SERVFAIL = 2
    NXDOMAIN = 3
    NOTIMP = 4
    REFUSED = 5


MAX_LABEL = 63
MAX_NAME = 255
MAX_POINTER_HOPS = 128


def type_name(rrtype: int) -> str:
    try:
        return RRType(rrtype).name
    except ValueError:
        return f"TYPE{rrtype}"


def type_from_text(text: str) -> int:
    text = text.upper()
    if text.startswith("TYPE") and text[4:].isdigit():
        return int(text[4:])
    if text == "RRSIG-PLACEHOLDER":
        return RRType.RRSIG
    try:
        return RRType[text]
    except KeyError:
        raise ValueError(f"unknown rrtype {text!r}") from None


def class_from_text(text: str) -> int:
    text = text.upper()
    if text in ("CH", "CHAOS"):
        return RRClass.CH
    if text.startswith("CLASS") and text[5:].isdigit():
        return int(text[5:])
    try:
        return RRClass[text]
    except KeyError:
        raise ValueError(f"unknown rrclass {text!r}") from None


def class_name(rrclass: int) -> str:
    try:
        return RRClass(rrclass).name
    except ValueError:
        return f"CLASS{rrclass}"


# Errors


class DnsError(Exception):
    pass


class LabelTooLong(DnsError):
    pass


class NameTooLong(DnsError):
    pass


class EmptyLabel(DnsError):
    pass


class BadEscape(DnsError):
    pass


class PointerLoop(DnsError):
    pass


class TruncatedName(DnsError):
    pass


class OffsetOutOfRange(DnsError):
    pass


class MalformedMessage(DnsError):
    """A message that could only be partly parsed.

    ``partial`` holds whatever was decoded before the problem (header,
    question and the records preceding the bad one), or ``None`` when even
    the header was unusable.
    """

    def __init__(self, reason: str, partial: Optional["DnsMessage"] = None):
        super().__init__(reason)
        self.partial = partial


class Truncated(MalformedMessage):
    pass


class MalformedRecord(MalformedMessage):
    pass


# Names


@dataclass(frozen=True, eq=False)
class DnsName:
    """An ordered sequence of raw-byte labels; ``()`` is the root.

    Equality and hashing ignore ASCII case only; every other byte is
    compared exactly.
    """

    labels: tuple[bytes, ...] = ()

    def __post_init__(self):
        labels = tuple(bytes(l) for l in self.labels)
        object.__setattr__(self, "labels", labels)
        for label in labels:
            if not label:
                raise EmptyLabel("zero-length label inside a name")
            if len(label) > MAX_LABEL:
                raise LabelTooLong(f"label of {len(label)} bytes")
        if self.wire_length > MAX_NAME:
            raise NameTooLong(f"name of {self.wire_length} wire bytes")

    @property
    def wire_length(self) -> int:
        return sum(len(l) + 1 for l in self.labels) + 1

    def key(self) -> tuple[bytes, ...]:
        return tuple(l.lower() for l in self.labels)

    def __eq__(self, other):
        if not isinstance(other, DnsName):
            return NotImplemented
        return self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __len__(self):
        return len(self.labels)

    def __str__(self):
        return name_to_presentation(self)

    def __repr__(self):
        return f"DnsName({name_to_presentation(self)!r})"

    @classmethod
    def from_text(cls, text: str) -> "DnsName":
        return name_from_presentation(text)

    @classmethod
    def from_flat(cls, flat: bytes) -> "DnsName":
        """Split a flattened name on every ``.``; empty pieces are skipped."""
        return cls(tuple(p for p in flat.split(b".") if p))

    def is_root(self) -> bool:
        return not self.labels

    def parent(self) -> "DnsName":
        if not self.labels:
            raise ValueError("root has no parent")
        return DnsName(self.labels[1:])

    def is_subdomain_of(self, other: "DnsName") -> bool:
        n = len(other.labels)
        if n == 0:
            return True
        return self.key()[-n:] == other.key() if len(self.labels) >= n else False

    def prepend(self, label: bytes) -> "DnsName":
        return DnsName((label,) + self.labels)


NameLike = Union[DnsName, str]


def as_name(name: NameLike) -> DnsName:
    return name if isinstance(name, DnsName) else name_from_presentation(name)


def encode_name(name: DnsName) -> bytes:
    out = bytearray()
    for label in name.labels:
        out.append(len(label))
        out += label
    out.append(0)
    return bytes(out)


def decode_name_strict(buffer: bytes, offset: int) -> tuple[DnsName, int]:
    """Decode a possibly-compressed name, keeping label bytes untouched."""
    if not 0 <= offset < len(buffer):
        raise OffsetOutOfRange(f"offset {offset} outside buffer of {len(buffer)}")
    labels = []
    pos = offset
    end = None
    hops = 0
    wire_len = 1
    while True:
        if pos >= len(buffer):
            raise TruncatedName(f"name runs past end of buffer at {pos}")
        length = buffer[pos]
        kind = length & 0xC0
        if kind == 0xC0:
            if pos + 1 >= len(buffer):
                raise TruncatedName("truncated compression pointer")
            hops += 1
            if hops > MAX_POINTER_HOPS:
                raise PointerLoop(f"more than {MAX_POINTER_HOPS} pointer hops")
            if end is None:
                end = pos + 2
            pos = ((length & 0x3F) << 8) | buffer[pos + 1]
            continue
        if kind:
            raise DnsError(f"unsupported label type 0x{length:02x} at {pos}")
        if length == 0:
            if end is None:
                end = pos + 1
            break
        if pos + 1 + length > len(buffer):
            raise TruncatedName(f"label at {pos} runs past end of buffer")
        wire_len += length + 1
        if wire_len > MAX_NAME:
            raise NameTooLong("decoded name exceeds 255 bytes")
        labels.append(buffer[pos + 1 : pos + 1 + length])
        pos += 1 + length
    return DnsName(tuple(labels)), end


def name_to_naive_string(name: DnsName) -> bytes:
    """Flatten a name the way a careless C decoder does.

    Labels are joined with ``.`` and the result is cut at the first zero
    byte. Nothing is escaped, so a dot inside a label looks like a separator.
    """
    flat = b".".join(name.labels)
    nul = flat.find(b"\x00")
    return flat if nul < 0 else flat[:nul]


# characters escaped with a plain backslash in presentation form
_BACKSLASHED = frozenset(b'.\\;()"@$')


def name_to_presentation(name: DnsName) -> str:
    if not name.labels:
        return "."
    parts = []
    for label in name.labels:
        chars = []
        for b in label:
            if b in _BACKSLASHED:
                chars.append("\\" + chr(b))
            elif 0x21 <= b <= 0x7E:
                chars.append(chr(b))
            else:
                chars.append(f"\\{b:03d}")
        parts.append("".join(chars))
    return ".".join(parts) + "."


def name_from_presentation(text: str) -> DnsName:
    """Parse ``\\.`` and ``\\DDD`` escapes; a trailing dot is optional."""
    if text == ".":
        return DnsName()
    if not text:
        raise EmptyLabel("empty name")
    raw = text.encode("utf-8")
    labels = []
    current = bytearray()
    i = 0
    n = len(raw)
    while i < n:
        c = raw[i]
        if c == 0x5C:  # backslash
            if i + 1 >= n:
                raise BadEscape(f"dangling backslash in {text!r}")
            nxt = raw[i + 1]
            if 0x30 <= nxt <= 0x39:
                digits = raw[i + 1 : i + 4]
                if len(digits) != 3 or not digits.isdigit():
                    raise BadEscape(f"\\DDD escape needs three digits in {text!r}")
                value = int(digits)
                if value > 255:
                    raise BadEscape(f"\\{digits.decode()} out of range")
                current.append(value)
                i += 4
            else:
                current.append(nxt)
                i += 2
        elif c == 0x2E:
            if not current:
                raise EmptyLabel(f"empty label in {text!r}")
            labels.append(bytes(current))
            current = bytearray()
            i += 1
        else:
            current.append(c)
            i += 1
    if current:
        labels.append(bytes(current))
    return DnsName(tuple(labels))


# Records


@dataclass(frozen=True)
class Soa:
    mname: DnsName
    rname: DnsName
    serial: int
    refresh: int
    retry: int
    expire: int
    minimum: int


Rdata = Union[str, DnsName, Soa, tuple, bytes]


@dataclass(frozen=True)
class ResourceRecord:
    """One record. ``rdata`` is typed by ``rrtype``:

    A/AAAA -> address string, CNAME/NS/PTR -> DnsName, SOA -> Soa,
    TXT -> tuple of byte strings, anything else -> opaque bytes.
    """

    name: DnsName
    rrtype: int
    rrclass: int = RRClass.IN
    ttl: int = 0
    rdata: Rdata = b""

    def with_ttl(self, ttl: int) -> "ResourceRecord":
        return replace(self, ttl=ttl)

    def __str__(self):
        return (
            f"{self.name} {self.ttl} {class_name(self.rrclass)} "
            f"{type_name(self.rrtype)} {rdata_to_text(self.rrtype, self.rdata)}"
        )


_NAME_TYPES = (RRType.CNAME, RRType.NS, RRType.PTR)


def rdata_to_text(rrtype: int, rdata) -> str:
    if rrtype in (RRType.A, RRType.AAAA):
        return str(rdata)
    if rrtype in _NAME_TYPES:
        return name_to_presentation(rdata)
    if rrtype == RRType.SOA:
        return (
            f"{rdata.mname} {rdata.rname} {rdata.serial} {rdata.refresh} "
            f"{rdata.retry} {rdata.expire} {rdata.minimum}"
        )
    if rrtype == RRType.TXT:
        return " ".join('"' + _txt_escape(s) + '"' for s in rdata)
    return f"\\# {len(rdata)} {bytes(rdata).hex()}" if rdata else "\\# 0"


def _txt_escape(s: bytes) -> str:
    out = []
    for b in s:
        if b in (0x22, 0x5C):
            out.append("\\" + chr(b))
        elif 0x20 <= b <= 0x7E:
            out.append(chr(b))
        else:
            out.append(f"\\{b:03d}")
    return "".join(out)


def encode_rdata(rrtype: int, rdata) -> bytes:
    if rrtype == RRType.A:
        return ipaddress.IPv4Address(rdata).packed
    if rrtype == RRType.AAAA:
        return ipaddress.IPv6Address(rdata).packed
    if rrtype in _NAME_TYPES:
        return encode_name(rdata)
    if rrtype == RRType.SOA:
        return (
            encode_name(rdata.mname)
            + encode_name(rdata.rname)
            + struct.pack(
                ">IIIII", rdata.serial, rdata.refresh, rdata.retry, rdata.expire, rdata.minimum
            )
        )
    if rrtype == RRType.TXT:
        out = bytearray()
        for s in rdata:
            if len(s) > 255:
                raise DnsError("TXT string longer than 255 bytes")
            out.append(len(s))
            out += s
        return bytes(out)
    return bytes(rdata)


def decode_rdata(buffer: bytes, offset: int, length: int, rrtype: int):
    end = offset + length
    if rrtype == RRType.A:
        if length != 4:
            raise DnsError("A rdata must be 4 bytes")
        return str(ipaddress.IPv4Address(buffer[offset:end]))
    if rrtype == RRType.AAAA:
        if length != 16:
            raise DnsError("AAAA rdata must be 16 bytes")
        return str(ipaddress.IPv6Address(buffer[offset:end]))
    if rrtype in _NAME_TYPES:
        name, pos = decode_name_strict(buffer, offset)
        if pos != end:
            raise DnsError("name rdata length mismatch")
        return name
    if rrtype == RRType.SOA:
        mname, pos = decode_name_strict(buffer, offset)
        rname, pos = decode_name_strict(buffer, pos)
        if pos + 20 != end:
            raise DnsError("SOA rdata length mismatch")
        return Soa(mname, rname, *struct.unpack(">IIIII", buffer[pos:end]))
    if rrtype == RRType.TXT:
        strings = []
        pos = offset
        while pos < end:
            n = buffer[pos]
            if pos + 1 + n > end:
                raise DnsError("TXT string overruns rdata")
            strings.append(buffer[pos + 1 : pos + 1 + n])
            pos += 1 + n
        return tuple(strings)
    return buffer[offset:end]


# Messages


@dataclass(frozen=True)
class Question:
    name: DnsName
    rrtype: int = RRType.A
    rrclass: int = RRClass.IN

    def __str__(self):
        return f"{self.name} {class_name(self.rrclass)} {type_name(self.rrtype)}"


@dataclass
class DnsMessage:
    txid: int = 0
    qr: bool = False
    opcode: int = 0
    aa: bool = False
    tc: bool = False
    rd: bool = False
    ra: bool = False
    z: bool = False
    ad: bool = False
    cd: bool = False
    rcode: int = Rcode.NOERROR
    question: list[Question] = field(default_factory=list)
    answers: list[ResourceRecord] = field(default_factory=list)
    authority: list[ResourceRecord] = field(default_factory=list)
    additional: list[ResourceRecord] = field(default_factory=list)

    @property
    def flags(self) -> int:
        return (
            (self.qr << 15)
            | ((self.opcode & 0xF) << 11)
            | (self.aa << 10)
            | (self.tc << 9)
            | (self.rd << 8)
            | (self.ra << 7)
            | (self.z << 6)
            | (self.ad << 5)
            | (self.cd << 4)
            | (self.rcode & 0xF)
        )

    @staticmethod
    def unpack_flags(flags: int) -> dict:
        return dict(
            qr=bool(flags & 0x8000),
            opcode=(flags >> 11) & 0xF,
            aa=bool(flags & 0x0400),
            tc=bool(flags & 0x0200),
            rd=bool(flags & 0x0100),
            ra=bool(flags & 0x0080),
            z=bool(flags & 0x0040),
            ad=bool(flags & 0x0020),
            cd=bool(flags & 0x0010),
            rcode=flags & 0xF,
        )

    @property
    def opt(self) -> Optional[ResourceRecord]:
        for rr in self.additional:
            if rr.rrtype == RRType.OPT:
                return rr
        return None

    def reply(self, **flags) -> "DnsMessage":
        """Empty response skeleton echoing txid, question, RD and CD."""
        msg = DnsMessage(
            txid=self.txid,
            qr=True,
            opcode=self.opcode,
            rd=self.rd,
            cd=self.cd,
            question=list(self.question),
        )
        for k, v in flags.items():
            setattr(msg, k, v)
        return msg

    def summary(self) -> str:
        kind = "R" if self.qr else "Q"
        q = str(self.question[0]) if self.question else "-"
        bits = "".join(
            tag for tag, on in (("aa ", self.aa), ("ad ", self.ad), ("cd ", self.cd)) if on
        )
        text = f"{kind} txid=0x{self.txid:04x} {bits}{q}"
        if self.qr:
            text += f" rcode={Rcode(self.rcode).name if self.rcode < 6 else self.rcode}"
            if self.answers:
                text += " [" + "; ".join(
                    f"{type_name(r.rrtype)} {rdata_to_text(r.rrtype, r.rdata)}"
                    for r in self.answers
                ) + "]"
        return text


_HEADER = struct.Struct(">HHHHHH")
_RR_FIXED = struct.Struct(">HHIH")


def make_query(
    name: NameLike,
    rrtype: int = RRType.A,
    txid: int = 0,
    *,
    rrclass: int = RRClass.IN,
    rd: bool = True,
    cd: bool = False,
    edns: bool = False,
) -> DnsMessage:
    msg = DnsMessage(txid=txid, rd=rd, cd=cd, question=[Question(as_name(name), rrtype, rrclass)])
    if edns:
        msg.additional.append(make_opt())
    return msg


def make_opt(payload_size: int = 1232) -> ResourceRecord:
    return ResourceRecord(DnsName(), RRType.OPT, payload_size, 0, b"")


def serialize_message(msg: DnsMessage) -> bytes:
    out = bytearray(
        _HEADER.pack(
            msg.txid & 0xFFFF,
            msg.flags,
            len(msg.question),
            len(msg.answers),
            len(msg.authority),
            len(msg.additional),
        )
    )
    for q in msg.question:
        out += encode_name(q.name)
        out += struct.pack(">HH", q.rrtype, q.rrclass)
    for section in (msg.answers, msg.authority, msg.additional):
        for rr in section:
            rdata = encode_rdata(rr.rrtype, rr.rdata)
            out += encode_name(rr.name)
            out += _RR_FIXED.pack(rr.rrtype, rr.rrclass, rr.ttl & 0xFFFFFFFF, len(rdata))
            out += rdata
    return bytes(out)


def parse_message(data: bytes) -> DnsMessage:
    """Parse a full message.

    Running out of bytes raises :class:`Truncated`; an undecodable record
    raises :class:`MalformedRecord`. Both carry the partially parsed
    message, with everything after the failure point dropped.
    """
    if len(data) < 12:
        raise Truncated(f"header needs 12 bytes, got {len(data)}")
    txid, flags, qd, an, ns, ar = _HEADER.unpack_from(data)
    msg = DnsMessage(txid=txid, **DnsMessage.unpack_flags(flags))
    pos = 12
    try:
        for _ in range(qd):
            name, pos = decode_name_strict(data, pos)
            if pos + 4 > len(data):
                raise TruncatedName("question runs past end of message")
            rrtype, rrclass = struct.unpack_from(">HH", data, pos)
            pos += 4
            msg.question.append(Question(name, rrtype, rrclass))
        for count, section in ((an, msg.answers), (ns, msg.authority), (ar, msg.additional)):
            for _ in range(count):
                rr, pos = _parse_record(data, pos)
                section.append(rr)
    except (TruncatedName, OffsetOutOfRange) as e:
        raise Truncated(str(e), msg) from e
    except DnsError as e:
        raise MalformedRecord(str(e), msg) from e
    return msg


def _parse_record(data: bytes, pos: int) -> tuple[ResourceRecord, int]:
    name, pos = decode_name_strict(data, pos)
    if pos + 10 > len(data):
        raise TruncatedName("record header runs past end of message")
    rrtype, rrclass, ttl, rdlen = _RR_FIXED.unpack_from(data, pos)
    pos += 10
    if pos + rdlen > len(data):
        raise TruncatedName("rdata runs past end of message")
    rdata = decode_rdata(data, pos, rdlen, rrtype)
    return ResourceRecord(name, rrtype, rrclass, ttl, rdata), pos + rdlen


def parse_lenient(data: bytes) -> tuple[Optional[DnsMessage], Optional[MalformedMessage]]:
    """Like :func:`parse_message` but returns ``(partial, error)`` instead of raising."""
    try:
        return parse_message(data), None
    except MalformedMessage as e:
        return e.partial, e


# Raw-packet helpers used by proxy-style forwarders that never re-encode.


def get_txid(data: bytes) -> int:
    return int.from_bytes(data[:2], "big")


def set_txid(data: bytes, txid: int) -> bytes:
    return (txid & 0xFFFF).to_bytes(2, "big") + data[2:]


def clear_flag_bits(data: bytes, mask: int) -> bytes:
    flags = int.from_bytes(data[2:4], "big") & ~mask & 0xFFFF
    return data[:2] + flags.to_bytes(2, "big") + data[4:]


FLAG_AD = 0x0020
FLAG_CD = 0x0010


def frame(payload: bytes) -> bytes:
    """Prefix a message with its 2-byte length for TCP transport."""
    if len(payload) > 0xFFFF:
        raise DnsError("message too large for TCP framing")
    return len(payload).to_bytes(2, "big") + payload


def unframe(data: bytes) -> tuple[bytes, bytes]:
    """Split one length-prefixed message off ``data``; returns ``(message, rest)``."""
    if len(data) < 2:
        raise Truncated("missing TCP length prefix")
    n = int.from_bytes(data[:2], "big")
    if len(data) < 2 + n:
        raise Truncated(f"TCP frame announces {n} bytes, {len(data) - 2} present")
    return data[2 : 2 + n], data[2 + n :]


def question_mismatch(query: DnsMessage, response: DnsMessage) -> bool:
    """True when the response's question does not repeat the query's byte-for-byte
    (modulo ASCII case)."""
    return [(q.name, q.rrtype, q.rrclass) for q in query.question] != [
        (q.name, q.rrtype, q.rrclass) for q in response.question
    ]


# Abstract DNSSEC: a signature placeholder record whose rdata carries the
# covered type and one validity byte. No cryptography is modelled.

_SIG = struct.Struct(">HB")


def make_signature(rr: ResourceRecord, valid: bool = True) -> ResourceRecord:
    return ResourceRecord(
        rr.name, RRType.RRSIG, rr.rrclass, rr.ttl, _SIG.pack(rr.rrtype, 1 if valid else 0) + b"sim"
    )


def signature_status(sig: ResourceRecord) -> tuple[int, bool]:
    """Return ``(covered type, valid)`` for a placeholder signature."""
    rdata = bytes(sig.rdata)
    if len(rdata) < 3:
        return -1, False
    covered, flag = _SIG.unpack_from(rdata)
    return covered, flag == 1
