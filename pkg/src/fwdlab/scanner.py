"""
Black-box forwarder scanner.

The scanner only talks DNS to the target's LAN side. Tests that need to see
what the router sends upstream (TXID and port reuse, cache presence) also
use an optional tap on the router's Internet side; without it they report
``unobservable``.

Verdict letters:
    (a) special-character injection  (b) TXID forwarding
    (c) sequential TXID               (d) fixed UDP port
    (e) CD=1 disables upstream DNSSEC
"""

from __future__ import annotations

import datetime as _dt
import json
import random
import socket
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence, Union

from .authns import injection_zone_text, randomized_probe_name
from .forwarder import ForwarderProfile
from .lab import ATTACKER_NS, Lab
from .netsim import SimEndpoint
from .wire import (
    DnsError,
    DnsMessage,
    DnsName,
    Rcode,
    RRClass,
    RRType,
    as_name,
    frame,
    make_query,
    parse_lenient,
    serialize_message,
    unframe,
)

QUERY_TIMEOUT = 3.0
RETRIES = 1
QUERIES_PER_TEST = 5
INJECTED = "6.6.6.6"
BASELINE = "1.1.1.1"

VARIANTS = ("zero/direct", "zero/cname", "dot/direct", "dot/cname")
LETTERS = {
    "a": "special-character injection",
    "b": "TXID forwarding",
    "c": "sequential TXID",
    "d": "fixed UDP port",
    "e": "CD=1 disables upstream DNSSEC",
}
SCANNER_HOST = "192.168.0.20"


class BaselineFailure(RuntimeError):
    pass


# Targets


class SimTarget:
    """An in-process lab around a forwarder profile, with the attacker zone
    delegated and its ``dnssec`` subzone marked as signed upstream."""

    def __init__(
        self,
        profile: Union[str, ForwarderProfile],
        *,
        seed: int = 0,
        tap: bool = True,
        reboot: bool = True,
        test_zone: str = "test.com",
        target_zone: str = "target.com",
    ):
        self.lab = Lab(
            profile,
            {ATTACKER_NS: [injection_zone_text(test_zone, target_zone)]},
            seed=seed,
            signed_zones=[f"dnssec.{test_zone}"],
        )
        self.name = f"sim:{profile.name if isinstance(profile, ForwarderProfile) else profile}"
        self.test_zone = test_zone
        self.target_zone = target_zone
        self._endpoint = SimEndpoint(self.lab.net, SCANNER_HOST, self.lab.router.lan, random.Random(f"scanner:{seed}"))
        self.tap = self.lab.upstream_tap if tap else None
        self.reboot_hook: Optional[Callable[[], None]] = self.lab.reboot if reboot else None

    def exchange(self, payload: bytes, transport: str = "udp", timeout: float = QUERY_TIMEOUT) -> Optional[bytes]:
        return self._endpoint.exchange(payload, timeout=timeout, transport=transport)

    def now(self) -> str:
        return _dt.datetime.fromtimestamp(self.lab.wall_clock, _dt.timezone.utc).isoformat()


class LiveTarget:
    """A real forwarder reached over UDP/TCP. No upstream tap, no reboot."""

    def __init__(self, host: str, port: int = 53, *, test_zone: str = "test.com", target_zone: str = "target.com"):
        self.host = host
        self.port = port
        self.name = f"{host}:{port}"
        self.test_zone = test_zone
        self.target_zone = target_zone
        self.tap = None
        self.reboot_hook = None

    def exchange(self, payload: bytes, transport: str = "udp", timeout: float = QUERY_TIMEOUT) -> Optional[bytes]:
        try:
            if transport == "tcp":
                with socket.create_connection((self.host, self.port), timeout=timeout) as s:
                    s.sendall(frame(payload))
                    buf = b""
                    while True:
                        chunk = s.recv(65537)
                        if not chunk:
                            break
                        buf += chunk
                        if len(buf) >= 2 and len(buf) >= 2 + int.from_bytes(buf[:2], "big"):
                            break
                    data, _ = unframe(buf)
                    return data
            with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as s:
                s.settimeout(timeout)
                s.sendto(payload, (self.host, self.port))
                while True:
                    data, _ = s.recvfrom(65535)
                    if data[:2] == payload[:2]:
                        return data
        except (OSError, DnsError):
            return None

    def now(self) -> str:
        return _dt.datetime.now(_dt.timezone.utc).isoformat()


def parse_target(spec: str, **kwargs) -> Union[SimTarget, LiveTarget]:
    """``sim:<profile>`` or ``host[:port]``."""
    if spec.startswith("sim:"):
        return SimTarget(spec[4:], **kwargs)
    live = {k: v for k, v in kwargs.items() if k in ("test_zone", "target_zone")}
    host, _, port = spec.rpartition(":") if ":" in spec else (spec, "", "53")
    return LiveTarget(host, int(port), **live)


# Report


@dataclass
class Capabilities:
    has_cache: Optional[bool] = None
    tcp: Optional[bool] = None
    version_bind: Optional[str] = None
    cname_merge: Optional[bool] = None
    edns_ok: Optional[bool] = None


@dataclass
class ScanReport:
    target: str
    started_at: str
    misinterpretation: dict[str, str] = field(default_factory=dict)
    txid: str = "unobservable"
    port: str = "unobservable"
    cd_forwarding: str = "inconclusive"
    capabilities: Capabilities = field(default_factory=Capabilities)
    baseline_ok: bool = True
    evidence: dict[str, list[str]] = field(default_factory=dict)

    def letters(self) -> list[str]:
        out = []
        if any(v == "vulnerable" for v in self.misinterpretation.values()):
            out.append("a")
        # a router without a cache only hands the attacker's own client its own answer
        if self.txid == "forwarded" and self.capabilities.has_cache is not False:
            out.append("b")
        if self.txid == "sequential":
            out.append("c")
        if self.port in ("static", "random_at_boot"):
            out.append("d")
        if self.cd_forwarding == "vulnerable":
            out.append("e")
        return out

    @property
    def any_attack(self) -> bool:
        return bool(self.letters())

    @property
    def inconclusive(self) -> bool:
        if not self.baseline_ok:
            return True
        return "inconclusive" in self.misinterpretation.values() or self.cd_forwarding == "inconclusive"

    def exit_code(self) -> int:
        if self.any_attack:
            return 1
        return 2 if self.inconclusive else 0

    def verdicts(self) -> dict:
        return {
            "misinterpretation": dict(self.misinterpretation),
            "txid": self.txid,
            "port": self.port,
            "cd_forwarding": self.cd_forwarding,
            "capabilities": asdict(self.capabilities),
            "baseline_ok": self.baseline_ok,
            "letters": self.letters(),
            "any_attack": self.any_attack,
        }

    def to_json(self) -> dict:
        return {
            "target": self.target,
            "verdicts": self.verdicts(),
            "evidence": self.evidence,
            "started_at": self.started_at,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True)

    def render_table(self) -> str:
        return render_table([self])


def _mark(v: Optional[Union[bool, str]]) -> str:
    if v is None:
        return "?"
    if v is True or v == "vulnerable":
        return "yes"
    if v is False or v == "safe":
        return "-"
    return str(v)


def render_table(reports: Sequence[ScanReport]) -> str:
    header = ["target", *VARIANTS, "txid", "port", "cd=1", "cache", "tcp", "version.bind", "merge", "edns", "any", "letters"]
    rows = [header]
    for r in reports:
        c = r.capabilities
        rows.append(
            [
                r.target,
                *(_mark(r.misinterpretation.get(v)) for v in VARIANTS),
                r.txid,
                r.port,
                _mark(r.cd_forwarding),
                _mark(c.has_cache),
                _mark(c.tcp),
                c.version_bind or "-",
                _mark(c.cname_merge),
                _mark(c.edns_ok),
                "yes" if r.any_attack else "-",
                ",".join(f"({x})" for x in r.letters()) or "-",
            ]
        )
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows)


# Scanner


@dataclass
class Probe:
    query: DnsMessage
    response: Optional[DnsMessage]
    malformed: Optional[str] = None

    @property
    def answered(self) -> bool:
        return self.response is not None

    def addresses(self) -> list[str]:
        if self.response is None:
            return []
        return [r.rdata for r in self.response.answers if r.rrtype == RRType.A]


class Scanner:
    """Runs the test battery against one target, one test at a time."""

    def __init__(self, target, *, seed: int = 0, timeout: float = QUERY_TIMEOUT, retries: int = RETRIES):
        self.target = target
        self.rng = random.Random(f"scan:{seed}")
        self.timeout = timeout
        self.retries = retries
        self.evidence: dict[str, list[str]] = {}
        test = as_name(target.test_zone)
        tgt = as_name(target.target_zone)
        self.test_zone = test
        self.target_zone = tgt

    # plumbing

    def _log(self, test: str, line: str) -> None:
        self.evidence.setdefault(test, []).append(line)

    def ask(
        self,
        test: str,
        name,
        rrtype: int = RRType.A,
        *,
        rrclass: int = RRClass.IN,
        cd: bool = False,
        edns: bool = False,
        transport: str = "udp",
        txid: Optional[int] = None,
    ) -> Probe:
        q = make_query(name, rrtype, self.rng.getrandbits(16) if txid is None else txid,
                       rrclass=rrclass, cd=cd, edns=edns)
        payload = serialize_message(q)
        tag = f"{transport} " if transport != "udp" else ""
        for _ in range(1 + self.retries):
            data = self.target.exchange(payload, transport=transport, timeout=self.timeout)
            if data is None:
                continue
            msg, err = parse_lenient(data)
            if msg is None or msg.txid != q.txid:
                continue
            self._log(test, f"{tag}{q.summary()} -> {msg.summary()}"
                      + (f" <malformed: {err}>" if err else ""))
            return Probe(q, msg, str(err) if err else None)
        self._log(test, f"{tag}{q.summary()} -> timeout")
        return Probe(q, None)

    def probe_name(self, base) -> DnsName:
        return randomized_probe_name(base, self.rng)

    def _upstream_since(self, mark: int, name: DnsName) -> list:
        out = []
        for pkt in self.target.tap[mark:]:
            msg, _ = parse_lenient(pkt.payload)
            if msg is not None and not msg.qr and msg.question and msg.question[0].name == name:
                out.append((msg, pkt))
        return out

    def _payload_names(self, label: bytes) -> dict[str, tuple[DnsName, DnsName]]:
        t, g = self.test_zone, self.target_zone
        victim = DnsName((label, b"www") + g.labels)
        zero = DnsName((label, b"www") + g.labels[:-1] + (g.labels[-1] + b"\x00",) + t.labels)
        dot = DnsName((label, b"www." + b".".join(g.labels[:-1])) + g.labels[-1:])
        return {
            "zero/direct": (zero, victim),
            "zero/cname": (DnsName((label, b"zero") + t.labels), victim),
            "dot/direct": (dot, victim),
            "dot/cname": (DnsName((label, b"dot") + t.labels), victim),
        }

    # tests

    def test_baseline(self) -> None:
        www = self.probe_name(self.target_zone.prepend(b"www"))
        p = self.ask("baseline", www)
        if BASELINE not in p.addresses():
            raise BaselineFailure(f"A baseline for {www} failed")
        alias = self.probe_name(self.test_zone.prepend(b"cname"))
        p = self.ask("baseline", alias)
        if BASELINE not in p.addresses():
            raise BaselineFailure(f"CNAME baseline for {alias} failed")

    def test_misinterpretation(self, variant: str) -> str:
        label = self.probe_name(self.test_zone).labels[0]
        trigger, victim = self._payload_names(label)[variant]
        test = f"misinterpretation {variant}"
        self.ask(test, trigger)
        got = self.ask(test, victim).addresses()
        if INJECTED in got:
            return "vulnerable"
        if BASELINE in got:
            return "safe"
        return "inconclusive"

    def _observe(self, test: str, n: int) -> list[Optional[tuple[int, int, int]]]:
        """``n`` fresh queries; per query (client txid, upstream txid, upstream port)."""
        out = []
        txids = self.rng.sample(range(65536), n)
        for txid in txids:
            name = self.probe_name(self.target_zone.prepend(b"www"))
            mark = len(self.target.tap)
            self.ask(test, name, txid=txid)
            seen = self._upstream_since(mark, name)
            if not seen:
                out.append(None)
                continue
            msg, pkt = seen[0]
            self._log(test, f"upstream: client txid 0x{txid:04x} -> 0x{msg.txid:04x} from port {pkt.src[1]}")
            out.append((txid, msg.txid, pkt.src[1]))
        return out

    def test_txid_policy(self) -> str:
        if self.target.tap is None:
            return "unobservable"
        obs = [o for o in self._observe("txid", QUERIES_PER_TEST) if o is not None]
        if len(obs) < 2:
            return "unobservable"
        if all(client == up for client, up, _ in obs):
            return "forwarded"
        ups = [up for _, up, _ in obs]
        if all((b - a) % 65536 == 1 for a, b in zip(ups, ups[1:])):
            return "sequential"
        return "random"

    def test_port_policy(self) -> str:
        if self.target.tap is None:
            return "unobservable"
        obs = [o for o in self._observe("port", QUERIES_PER_TEST) if o is not None]
        if len(obs) < 2:
            return "unobservable"
        ports = {port for _, _, port in obs}
        if len(ports) > 1:
            return "random"
        if self.target.reboot_hook is None:
            self._log("port", "same port for every query; no reboot available, boot-time choice not ruled out")
            return "static"
        self.target.reboot_hook()
        self._log("port", "router rebooted")
        after = [o for o in self._observe("port", 1) if o is not None]
        if not after:
            return "static"
        return "static" if after[0][2] in ports else "random_at_boot"

    def test_cd_forwarding(self) -> str:
        name = self.probe_name(self.test_zone.prepend(b"dnssec"))
        first = self.ask("cd", name, cd=True)
        if first.response is None:
            return "inconclusive"
        if first.response.rcode == Rcode.SERVFAIL:
            self._log("cd", "CD=1 query failed validation upstream: flag not passed on")
            return "safe"
        second = self.ask("cd", name)
        if second.response is None:
            return "inconclusive"
        return "vulnerable" if INJECTED in second.addresses() else "safe"

    def test_capabilities(self) -> Capabilities:
        caps = Capabilities()
        alias = self.probe_name(self.test_zone.prepend(b"cname"))
        mark = len(self.target.tap) if self.target.tap is not None else 0
        first = self.ask("capabilities", alias)
        second = self.ask("capabilities", alias)
        if self.target.tap is not None and first.answered and second.answered:
            caps.has_cache = len(self._upstream_since(mark, alias)) < 2
        if first.answered and second.answered:
            caps.cname_merge = any(
                p.addresses() and not any(r.rrtype == RRType.CNAME for r in p.response.answers)
                for p in (first, second)
            )
        vb = self.ask("capabilities", "version.bind", RRType.TXT, rrclass=RRClass.CH)
        if vb.response is not None:
            txt = [r.rdata for r in vb.response.answers if r.rrtype == RRType.TXT]
            if txt and txt[0]:
                caps.version_bind = b"".join(txt[0]).decode("ascii", "replace")
        www = self.probe_name(self.target_zone.prepend(b"www"))
        caps.tcp = self.ask("capabilities", www, transport="tcp").answered
        www = self.probe_name(self.target_zone.prepend(b"www"))
        edns = self.ask("capabilities", www, edns=True)
        if edns.answered:
            caps.edns_ok = edns.malformed is None
        return caps

    def scan(self) -> ScanReport:
        report = ScanReport(target=self.target.name, started_at=self.target.now())
        try:
            self.test_baseline()
        except BaselineFailure as e:
            self._log("baseline", f"skipped: {e}")
            report.baseline_ok = False
            report.misinterpretation = {v: "inconclusive" for v in VARIANTS}
            report.evidence = self.evidence
            return report
        for v in VARIANTS:
            report.misinterpretation[v] = self.test_misinterpretation(v)
        report.txid = self.test_txid_policy()
        report.cd_forwarding = self.test_cd_forwarding()
        report.capabilities = self.test_capabilities()
        # last: the reboot clears the router's state
        report.port = self.test_port_policy()
        report.evidence = self.evidence
        return report


def build_report(report: ScanReport) -> tuple[ScanReport, str, dict]:
    return report, report.render_table(), report.to_json()


def scan_target(target, seed: int = 0, **kwargs) -> ScanReport:
    return Scanner(target, seed=seed, **kwargs).scan()
