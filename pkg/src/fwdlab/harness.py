"""
End-to-end attack scenarios over a simulated home network.

Every scenario builds a fresh :class:`~fwdlab.lab.Lab`, plays the attack,
and then checks the result the way a user would notice it: an honest
client on the LAN looks up the victim name and sees which address it gets.
Cache contents are never consulted to decide success.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .authns import incomplete_cname_zone_text, randomized_probe_name, static_zone_text
from .forwarder import ForwarderProfile
from .lab import (
    ATTACKER_NS,
    NAT_RULE,
    RECURSIVE,
    ROUTER_WAN,
    VICTIM_NS,
    Lab,
)
from .netsim import Event, Packet, SimEndpoint
from .resolver import (
    ChaseDepthExceeded,
    NoAddress,
    RecursiveConfig,
    StubConfig,
    StubResolver,
    Timeout,
    addresses,
    cname_terminal,
)
from .wire import (
    DnsError,
    DnsMessage,
    DnsName,
    RRClass,
    RRType,
    ResourceRecord,
    as_name,
    make_query,
    make_signature,
    parse_lenient,
    parse_message,
    serialize_message,
)

INJECTED = "6.6.6.6"
LEGIT = "1.2.3.4"
LEGIT_TTL = 300
SPOOF_TTL = 600
DEFAULT_RACE_WINDOW = 1000
SCENARIOS = ("xdri-cname", "txid-known", "static-port", "cd-disable")


class ScenarioStall(RuntimeError):
    """An expected step never happened; carries the transcript so far."""

    def __init__(self, message: str, transcript: Sequence[Event] = ()):
        super().__init__(message)
        self.transcript = list(transcript)


@dataclass
class AttackOutcome:
    scenario: str
    profile: str
    seed: int
    success: bool
    packets_sent_by_attacker: int = 0
    poisoned_mapping: Optional[tuple[str, str]] = None
    transcript: list[Event] = field(default_factory=list, repr=False)
    reason: str = ""
    rounds: int = 0
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.success and self.poisoned_mapping is None:
            raise ValueError("a successful attack must name the poisoned mapping")

    def to_dict(self, transcript: bool = False) -> dict:
        out = {
            "scenario": self.scenario,
            "profile": self.profile,
            "seed": self.seed,
            "success": self.success,
            "packets_sent_by_attacker": self.packets_sent_by_attacker,
            "poisoned_mapping": list(self.poisoned_mapping) if self.poisoned_mapping else None,
            "reason": self.reason,
            "rounds": self.rounds,
            "details": self.details,
        }
        if transcript:
            out["transcript"] = [str(e) for e in self.transcript]
        return out

    def render(self, transcript: bool = False) -> str:
        lines = [
            f"scenario: {self.scenario}",
            f"profile:  {self.profile}",
            f"seed:     {self.seed}",
            f"result:   {'success' if self.success else 'failure'}",
            f"spoofed packets sent: {self.packets_sent_by_attacker}",
        ]
        if self.rounds:
            lines.append(f"rounds:   {self.rounds}")
        if self.poisoned_mapping:
            lines.append(f"poisoned: {self.poisoned_mapping[0]} -> {self.poisoned_mapping[1]}")
        if self.reason:
            lines.append(f"reason:   {self.reason}")
        if transcript:
            lines.append("transcript:")
            lines.extend("  " + str(e) for e in self.transcript)
        return "\n".join(lines)


def _profile_name(profile) -> str:
    return profile.name if isinstance(profile, ForwarderProfile) else str(profile)


def _has_cache(lab: Lab) -> bool:
    return lab.forwarder is not None and lab.forwarder.profile.cache_model != "none"


def _honest_lookup(lab: Lab, name, rng: random.Random) -> Optional[str]:
    """Fresh lookup from the honest client with a non-chasing stub."""
    stub = StubResolver(StubConfig(chase_incomplete_cname=False), lab.victim, rng)
    try:
        return stub.lookup(name)
    except Timeout:
        raise ScenarioStall(f"honest lookup of {as_name(name)} got no answer", lab.transcript) from None
    except (NoAddress, ChaseDepthExceeded):
        return None


def _victim_zone(victim: DnsName, signed: bool = False) -> str:
    return static_zone_text(str(victim.parent()), [(str(victim), LEGIT_TTL, LEGIT)], signed=signed)


# Special-character injection triggered by a chasing stub


def run_xdri_cname_chase(
    profile: Union[str, ForwarderProfile],
    stub_config: StubConfig = StubConfig(),
    *,
    seed: int = 0,
    malicious_client: bool = False,
    victim: str = "www.victim.com",
    attacker: str = "attacker.com",
) -> AttackOutcome:
    """Poison the router through its own LAN client's CNAME chasing.

    The honest client resolves a name in the attacker's zone (any embedded
    link will do). The answer is an alias to ``www.victim.com\\000.<attacker>``
    without an address; the chasing stub then asks for that raw name itself,
    and the attacker's server now answers it with the malicious address.
    With ``malicious_client`` the attacker also controls a LAN host that
    queries the raw name directly.
    """
    v = as_name(victim)
    lab = Lab(
        profile,
        {
            ATTACKER_NS: [incomplete_cname_zone_text(attacker, victim, INJECTED)],
            VICTIM_NS: [_victim_zone(v)],
        },
        seed=seed,
    )
    rng = random.Random(f"xdri:{seed}")
    trigger = randomized_probe_name(f"sub.{attacker}", rng)
    chaser = StubResolver(stub_config, lab.victim, rng)
    try:
        chaser.lookup(trigger)
    except Timeout:
        raise ScenarioStall(f"trigger lookup of {trigger} got no answer", lab.transcript) from None
    except (NoAddress, ChaseDepthExceeded):
        pass
    if malicious_client:
        hidden = DnsName(v.labels[:-1] + (v.labels[-1] + b"\x00",) + as_name(attacker).labels)
        insider = StubResolver(StubConfig(chase_incomplete_cname=False), lab.malicious, rng)
        for _ in range(2):
            try:
                insider.lookup(hidden)
                break
            except (NoAddress, Timeout):
                continue

    got = _honest_lookup(lab, v, rng)
    success = got == INJECTED
    return AttackOutcome(
        scenario="xdri-cname",
        profile=_profile_name(profile),
        seed=seed,
        success=success,
        packets_sent_by_attacker=0,
        poisoned_mapping=(str(v), got) if success else None,
        transcript=list(lab.transcript),
        reason="" if success else f"honest lookup returned {got}",
        details={
            "stub_queries": [str(n) for n in chaser.queries],
            "follow_up_queries": len(chaser.queries) - 1,
            "authoritative_answers": lab.authoritative[ATTACKER_NS].served,
        },
    )


# Off-path spoofing races


def _spoof_template(victim: DnsName) -> bytes:
    msg = DnsMessage(qr=True, rd=True, ra=True)
    msg.question = [make_query(victim).question[0]]
    msg.answers = [ResourceRecord(victim, RRType.A, RRClass.IN, SPOOF_TTL, INJECTED)]
    return serialize_message(msg)


@dataclass
class _Race:
    """Shared loop of the two flooding attacks.

    Each round: a LAN client asks for the victim name, the attacker floods
    up to ``race_window`` spoofed answers (the genuine answer arrives after
    that), and if nothing stuck the attacker waits for the genuine record
    to expire before trying again.
    """

    lab: Lab
    victim: DnsName
    trigger: SimEndpoint
    budget: int
    race_window: int
    max_rounds: int
    next_guesses: Callable[[int, int], tuple[np.ndarray, np.ndarray]]
    rng: random.Random
    sent: int = 0
    rounds: int = 0
    client_txid: int = 0

    def run(self) -> Optional[str]:
        lab = self.lab
        template = _spoof_template(self.victim)
        tap = lab.upstream_tap
        while self.sent < self.budget and self.rounds < self.max_rounds:
            self.rounds += 1
            self.client_txid = self.rng.getrandbits(16)
            query = serialize_message(make_query(self.victim, RRType.A, self.client_txid))
            mark = len(tap)
            addr, sink = self.trigger.send(query)
            lab.net.run(until=lab.net.now + 3.0, stop=lambda: len(tap) > mark or bool(sink.inbox))
            if len(tap) > mark:
                n = min(self.race_window, self.budget - self.sent)
                ports, txids = self.next_guesses(n, self.client_txid)
                lab.net.flood(RECURSIVE, ROUTER_WAN, ports, txids, template)
                self.sent += n
                lab.net.run(until=lab.net.now + 3.0, stop=lambda: bool(sink.inbox))
            lab.net.unbind(addr)
            got = None
            if sink.inbox:
                msg, _ = parse_lenient(sink.inbox[0].payload)
                if msg is not None:
                    got = next(iter(addresses(msg)), None)
            elif len(tap) == mark:
                raise ScenarioStall("trigger query was neither answered nor forwarded", lab.transcript)
            if got == INJECTED:
                return got
            # let the genuine answer age out of every cache before the next try
            lab.advance(LEGIT_TTL + 1)
        return None


def _spoof_lab(profile, seed: int) -> tuple[Lab, DnsName]:
    victim = as_name("www.victim.com")
    lab = Lab(profile, {VICTIM_NS: [_victim_zone(victim)]}, seed=seed)
    return lab, victim


def _race_outcome(scenario, profile, seed, lab, race, victim, rng, extra) -> AttackOutcome:
    delivered = race.run()
    got = None
    if delivered is not None and _has_cache(lab):
        got = _honest_lookup(lab, victim, rng)
        success = got == INJECTED
        reason = "" if success else f"honest lookup returned {got}"
    elif delivered is not None:
        # no cache: the spoofed answer went straight to the client that asked
        success = race.trigger is lab.victim
        got = delivered
        reason = "" if success else "spoofed answer reached only the attacker's own client"
    else:
        success = False
        if race.sent >= race.budget:
            reason = f"budget exhausted after {race.sent} spoofed packets"
        else:
            reason = f"gave up after {race.rounds} rounds"
    return AttackOutcome(
        scenario=scenario,
        profile=_profile_name(profile),
        seed=seed,
        success=success,
        packets_sent_by_attacker=race.sent,
        poisoned_mapping=(str(victim), got) if success else None,
        transcript=list(lab.transcript),
        reason=reason,
        rounds=race.rounds,
        details={"race_window": race.race_window, "budget": race.budget, **extra},
    )


class _Cursor:
    """Walk a fixed enumeration order, wrapping around at the end."""

    def __init__(self, values: np.ndarray):
        self.values = values
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        out = np.empty(n, dtype=np.int64)
        filled = 0
        while filled < n:
            k = min(n - filled, len(self.values) - self.pos)
            out[filled : filled + k] = self.values[self.pos : self.pos + k]
            filled += k
            self.pos = (self.pos + k) % len(self.values)
        return out


def run_txid_known_attack(
    profile: Union[str, ForwarderProfile],
    spoof_budget: int = 65536,
    *,
    seed: int = 0,
    race_window: int = DEFAULT_RACE_WINDOW,
    max_rounds: int = 5000,
) -> AttackOutcome:
    """The attacker's LAN client picks the TXID and tells the off-path attacker.

    Against a forwarder that reuses client TXIDs only the port is unknown,
    so the flood enumerates the port space (a known static port makes it a
    single packet).
    """
    lab, victim = _spoof_lab(profile, seed)
    rng = random.Random(f"txid-known:{seed}")
    prof = lab.forwarder.profile if lab.forwarder is not None else None
    if prof is not None and prof.port_policy == "static":
        order = np.array([prof.static_port], dtype=np.int64)
    else:
        order = np.random.default_rng(seed).permutation(np.arange(1024, 65536, dtype=np.int64))
    ports = _Cursor(order)

    def guesses(n, client_txid):
        n = min(n, len(order))
        return ports.take(n), np.full(n, client_txid, dtype=np.int64)

    race = _Race(lab, victim, lab.malicious, spoof_budget, race_window, max_rounds, guesses, rng)
    return _race_outcome("txid-known", profile, seed, lab, race, victim, rng,
                         {"known_port": len(order) == 1})


def fingerprint_port(lab: Lab) -> int:
    """Stand-in for identifying the device model: tells the attacker the
    port the router's socket is bound to, or the last port it used when it
    has no long-lived socket."""
    if lab.forwarder is None:
        return 1024
    st = lab.forwarder.state
    if st.boot_port is not None:
        return st.boot_port
    return st.last_port if st.last_port is not None else 1024


def run_static_port_attack(
    profile: Union[str, ForwarderProfile],
    spoof_budget: int = 65536,
    *,
    seed: int = 0,
    race_window: int = DEFAULT_RACE_WINDOW,
    max_rounds: int = 5000,
) -> AttackOutcome:
    """Flood TXID guesses at the port the router keeps using.

    Works without a cache too: the honest client's own query is then the
    one raced, and the spoofed answer is handed straight to it.
    """
    lab, victim = _spoof_lab(profile, seed)
    rng = random.Random(f"static-port:{seed}")
    # an earlier, unrelated lookup so a per-query forwarder has a "last" port
    StubResolver(StubConfig(chase_incomplete_cname=False), lab.malicious, rng).query(
        randomized_probe_name("victim.com", rng)
    )
    port = fingerprint_port(lab)
    order = np.random.default_rng(seed).permutation(np.arange(65536, dtype=np.int64))
    txids = _Cursor(order)

    def guesses(n, _client_txid):
        return np.full(n, port, dtype=np.int64), txids.take(n)

    trigger = lab.malicious if _has_cache(lab) else lab.victim
    race = _Race(lab, victim, trigger, spoof_budget, race_window, max_rounds, guesses, rng)
    return _race_outcome("static-port", profile, seed, lab, race, victim, rng, {"port": port})


# Checking-disabled bypass


class Tamperer:
    """On-path element between the recursive resolver and one authoritative
    server; while active it swaps answers for the target name."""

    def __init__(self, server: str, name: DnsName, address: str = INJECTED):
        self.server = server
        self.name = name
        self.address = address
        self.active = False
        self.tampered = 0

    def __call__(self, packet: Packet) -> Optional[Packet]:
        if not self.active or packet.src[0] != self.server:
            return packet
        try:
            msg = parse_message(packet.payload)
        except DnsError:
            return packet
        if not msg.question or msg.question[0].name != self.name or msg.question[0].rrtype != RRType.A:
            return packet
        forged = ResourceRecord(self.name, RRType.A, RRClass.IN, SPOOF_TTL, self.address)
        msg.answers = [forged, make_signature(forged, valid=False)]
        msg.authority = []
        self.tampered += 1
        return replace(packet, payload=serialize_message(msg))


def run_cd_disable_attack(
    profile: Union[str, ForwarderProfile],
    *,
    seed: int = 0,
    victim: str = "www.victim.com",
) -> AttackOutcome:
    """Get a forged, badly signed record past a validating upstream.

    The attacker's LAN client asks with CD=1 while an on-path element
    rewrites the authoritative answer. A validating resolver that honours
    CD relays the forgery without caching it; whether the honest client is
    later served it depends only on what the router does with CD.
    """
    v = as_name(victim)
    lab = Lab(
        profile,
        {VICTIM_NS: [_victim_zone(v, signed=True)]},
        seed=seed,
        recursive=RecursiveConfig(validate_dnssec=True, honor_cd=True),
        signed_zones=[v.parent()],
    )
    rng = random.Random(f"cd:{seed}")
    tamperer = Tamperer(VICTIM_NS, v)
    lab.net.add_middlebox(tamperer)

    tamperer.active = True
    query = make_query(v, RRType.A, rng.getrandbits(16), cd=True)
    data = lab.malicious.exchange(serialize_message(query), timeout=3.0)
    if data is None:
        data = lab.malicious.exchange(serialize_message(query), timeout=3.0)
    tamperer.active = False
    if data is None:
        raise ScenarioStall("CD=1 query got no answer", lab.transcript)
    first, _ = parse_lenient(data)
    first_answer = addresses(first) if first is not None else []

    got = _honest_lookup(lab, v, rng)
    success = got == INJECTED
    return AttackOutcome(
        scenario="cd-disable",
        profile=_profile_name(profile),
        seed=seed,
        success=success,
        packets_sent_by_attacker=tamperer.tampered,
        poisoned_mapping=(str(v), got) if success else None,
        transcript=list(lab.transcript),
        reason="" if success else f"honest lookup returned {got}",
        details={
            "cd_query_rcode": first.rcode if first is not None else None,
            "cd_query_answer": first_answer,
            "upstream_saw_cd": any(
                (parse_lenient(p.payload)[0] or DnsMessage()).cd for p in lab.upstream_tap
            ),
        },
    )


def run_scenario(name: str, profile, seed: int = 0, **kwargs) -> AttackOutcome:
    if name == "xdri-cname":
        return run_xdri_cname_chase(profile, kwargs.pop("stub_config", StubConfig()), seed=seed, **kwargs)
    if name == "txid-known":
        return run_txid_known_attack(profile, kwargs.pop("spoof_budget", 65536), seed=seed, **kwargs)
    if name == "static-port":
        return run_static_port_attack(profile, kwargs.pop("spoof_budget", 65536), seed=seed, **kwargs)
    if name == "cd-disable":
        return run_cd_disable_attack(profile, seed=seed, **kwargs)
    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIOS}")


# TTL survey

TTL_BUCKETS = ("<=60", "<=300", ">300")


@dataclass
class TtlSurvey:
    buckets: dict[str, int]
    failures: int
    ttls: dict[str, Optional[int]]

    @property
    def total(self) -> int:
        return sum(self.buckets.values()) + self.failures

    def render(self) -> str:
        lines = [f"{k:>6}  {v}" for k, v in self.buckets.items()]
        lines.append(f"failed  {self.failures}")
        return "\n".join(lines)


def bucket_for(ttl: int) -> str:
    if ttl <= 60:
        return "<=60"
    if ttl <= 300:
        return "<=300"
    return ">300"


def ttl_survey(names: Sequence[str], endpoint, *, timeout: float = 2.0, seed: int = 0) -> TtlSurvey:
    """Record the A-record TTL each name is served with.

    ``endpoint.exchange(payload, timeout)`` reaches the resolver. Failures
    (timeouts, errors, no address) are counted, never raised.
    """
    rng = random.Random(f"ttl:{seed}")
    stub = StubResolver(StubConfig(chase_incomplete_cname=False, timeout=timeout), endpoint, rng)
    buckets = {k: 0 for k in TTL_BUCKETS}
    ttls: dict[str, Optional[int]] = {}
    failures = 0
    for text in names:
        ttl = None
        try:
            name = as_name(text)
            resp = stub.query(name)
            end = cname_terminal(name, resp.answers)
            found = [r.ttl for r in resp.answers if r.rrtype == RRType.A and r.name == end]
            ttl = found[0] if found else None
        except (Timeout, DnsError, ValueError):
            ttl = None
        ttls[text] = ttl
        if ttl is None:
            failures += 1
        else:
            buckets[bucket_for(ttl)] += 1
    return TtlSurvey(buckets if ttls else {}, failures, ttls)


def simulated_ttl_survey(zone_ttls: dict[str, int], extra_names: Sequence[str] = (), seed: int = 0) -> TtlSurvey:
    """Survey names served by a simulated zone with the given TTLs."""
    names = list(zone_ttls) + list(extra_names)
    by_parent: dict[str, list] = {}
    for name, ttl in zone_ttls.items():
        n = as_name(name)
        by_parent.setdefault(str(n.parent()), []).append((name, ttl, LEGIT))
    servers = {f"192.0.2.{100 + i}": [static_zone_text(p, recs)] for i, (p, recs) in enumerate(by_parent.items())}
    lab = Lab(NAT_RULE, servers, seed=seed)
    return ttl_survey(names, lab.victim, seed=seed)
