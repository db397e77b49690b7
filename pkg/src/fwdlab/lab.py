"""
Simulated home network: clients, a router's forwarder, an upstream
recursive resolver and authoritative servers, wired over one
:class:`~fwdlab.netsim.SimNetwork`.
"""

from __future__ import annotations

import random
from typing import Sequence, Union

from .authns import AuthoritativeServer, ZoneScript, load_zone_script
from .forwarder import Forwarder, ForwarderNode, ForwarderProfile, NatRouter, get_profile
from .netsim import Address, SimEndpoint, SimNetwork
from .resolver import RecursiveConfig, RecursiveNode, RecursiveResolver

VICTIM_HOST = "192.168.0.10"
MALICIOUS_HOST = "192.168.0.66"
ROUTER_LAN: Address = ("192.168.0.1", 53)
ROUTER_WAN = "203.0.113.2"
RECURSIVE: Address = ("198.51.100.1", 53)
ATTACKER_NS = "192.0.2.66"
VICTIM_NS = "192.0.2.10"
ATTACKER_HOST = "192.0.2.99"

# wall clock of the lab at simulated time 0
EPOCH = 1_700_000_000

NAT_RULE = "nat-rule"


def resolve_profile(profile: Union[str, ForwarderProfile]) -> Union[ForwarderProfile, str]:
    if isinstance(profile, ForwarderProfile):
        return profile
    if profile == NAT_RULE:
        return NAT_RULE
    return get_profile(profile)


class Lab:
    """One complete topology.

    ``servers`` maps an authoritative host to its zone scripts (objects or
    script text). Every zone apex is delegated to the host serving it.
    """

    def __init__(
        self,
        profile: Union[str, ForwarderProfile],
        servers: dict[str, Sequence[Union[ZoneScript, str]]],
        *,
        seed: int = 0,
        recursive: RecursiveConfig = RecursiveConfig(),
        signed_zones: Sequence = (),
        latency: float = 0.0005,
        packet_time: float = 1e-6,
    ):
        self.seed = seed
        self.rng = random.Random(f"lab:{seed}")
        self.net = SimNetwork(latency=latency, packet_time=packet_time)
        self.profile = resolve_profile(profile)
        self.upstream_tap = self.net.tap(ROUTER_WAN)

        self.authoritative: dict[str, AuthoritativeServer] = {}
        delegations = {}
        for host, zones in servers.items():
            scripts = [load_zone_script(z) if isinstance(z, str) else z for z in zones]
            server = AuthoritativeServer(scripts)
            self.authoritative[host] = server
            self.net.bind((host, 53), server)
            for z in scripts:
                delegations[z.apex] = (host, 53)

        self.resolver = RecursiveResolver(
            recursive, delegations, signed_zones=signed_zones, seed=seed
        )
        self.recursive_node = RecursiveNode(self.net, RECURSIVE, self.resolver)

        if self.profile == NAT_RULE:
            self.router = NatRouter(ROUTER_LAN, ROUTER_WAN, RECURSIVE, seed=seed)
            self.forwarder = None
        else:
            self.forwarder = Forwarder(
                self.profile,
                upstream=RECURSIVE,
                seed=seed,
                clock=lambda: self.net.now,
                wall_clock=self.wall_clock,
            )
            self.router = ForwarderNode(self.forwarder, ROUTER_LAN, ROUTER_WAN)
            self.net.sync_ports(ROUTER_WAN, self.forwarder.open_ports, self.router)
        self.net.bind(ROUTER_LAN, self.router)

        self.victim = SimEndpoint(self.net, VICTIM_HOST, ROUTER_LAN, random.Random(f"victim:{seed}"))
        self.malicious = SimEndpoint(self.net, MALICIOUS_HOST, ROUTER_LAN, random.Random(f"malicious:{seed}"))
        self.reboots = 0

    @property
    def wall_clock(self) -> float:
        return EPOCH + self.net.now

    def reboot(self, downtime: float = 30.0) -> None:
        """Power-cycle the router; the outside world's clock keeps running."""
        self.net.run(until=self.net.now + downtime)
        self.reboots += 1
        if self.forwarder is None:
            self.router.reboot()
            self.net.sync_ports(ROUTER_WAN, self.router.open_ports, self.router)
        else:
            self.router.reboot(self.net, self.wall_clock)

    def advance(self, seconds: float) -> None:
        self.net.run(until=self.net.now + seconds)

    @property
    def transcript(self):
        return self.net.transcript
