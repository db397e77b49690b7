"""Acceptance criteria, one test each, each reporting one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (lines appear in the
terminal summary) or ``python3 tests/test_acceptance.py``.
"""

import ipaddress
import random
import time
from dataclasses import replace

from conftest import ACCEPTANCE_LINES
from fwdlab.authns import AuthoritativeServer, load_zone_script
from fwdlab.forwarder import boot_time_port, get_profile
from fwdlab.harness import run_cd_disable_attack, run_txid_known_attack, run_xdri_cname_chase
from fwdlab.resolver import RecursiveResolver
from fwdlab.scanner import SimTarget, scan_target
from fwdlab.lab import Lab
from fwdlab.wire import (
    DnsMessage,
    DnsName,
    Question,
    RRClass,
    RRType,
    ResourceRecord,
    Soa,
    decode_name_strict,
    encode_name,
    make_query,
    name_from_presentation,
    name_to_naive_string,
    parse_message,
    serialize_message,
)


def report(number, title, ok, detail):
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# 1


def test_xdri_determinism():
    start = time.perf_counter()
    naive = sum(run_xdri_cname_chase("dproxy-like", seed=s).success for s in range(100))
    strict = sum(run_xdri_cname_chase("dnsmasq-like", seed=s).success for s in range(100))
    elapsed = time.perf_counter() - start
    ok = naive == 100 and strict == 0 and elapsed < 5.0
    report(1, "xdri determinism", ok,
           f"dproxy-like {naive}/100 poisoned, dnsmasq-like {strict}/100 poisoned, {elapsed:.2f}s (limit 5s)")


# 2

TABLE = {
    "dproxy-like": ["a", "b", "d", "e"],
    "dnrd-like": ["a"],
    "tenda-like": ["a", "d", "e"],
    "dnsmasq-like": [],
}


def test_payload_matrix():
    got = {p: scan_target(SimTarget(p, seed=0)).letters() for p in TABLE}
    ok = got == TABLE
    detail = "; ".join(f"{p} {','.join(v) or 'none'}" for p, v in got.items())
    report(2, "scanner letters", ok, detail + ("" if ok else f" (expected {TABLE})"))


# 3

PAYLOAD_ZONE = r"""
$ORIGIN com.
zero.test.com. 300 IN CNAME www.target.com\000.test.com.
www.target.com\000.test.com. 300 IN A 6.6.6.6
dot.test.com. 300 IN CNAME www\.target.com.
www\.target.com. 300 IN A 6.6.6.6
www.target.com. 300 IN A 1.1.1.1
"""


def test_upstream_immunity():
    server = AuthoritativeServer([load_zone_script(PAYLOAD_ZONE)])
    resolver = RecursiveResolver(delegations={"com": ("ns", 53)}, ask=lambda addr, data: server.handle(data))
    payloads = ["zero.test.com", "www.target.com\\000.test.com", "dot.test.com", "www\\.target.com"]
    for name in payloads:
        resolver.resolve(make_query(name_from_presentation(name), RRType.A, 1))
    resolver.resolve(make_query("www.target.com", RRType.A, 2))
    www = name_from_presentation("www.target.com").key()
    stored = sorted({(int(rr.rrtype), rr.rdata) for (key, _), entry in resolver.cache.items()
                     if key == www for rr in entry.records})
    ok = stored == [(int(RRType.A), "1.1.1.1")]
    report(3, "upstream immunity", ok, f"www.target.com cache entries {stored} after {len(payloads)} payloads")


# 4


def test_entropy_scaling():
    start = time.perf_counter()
    worst = 0
    failures = []
    for seed in range(100):
        out = run_txid_known_attack("dproxy-like", 65536, seed=seed)
        if not out.success or out.packets_sent_by_attacker > 65536:
            failures.append(seed)
        worst = max(worst, out.packets_sent_by_attacker)
    runs = 1000
    hits = sum(run_txid_known_attack("dnsmasq-like", 65536, seed=seed, race_window=65536).success
               for seed in range(runs))
    bound = 65536 / 2**32
    rate = hits / runs
    elapsed = time.perf_counter() - start
    ok = not failures and 0 <= rate <= 3 * bound and elapsed < 60.0
    report(4, "entropy scaling", ok,
           f"txid known: 100/100 seeds in <= {worst} packets" if not failures else f"txid known failed on {failures}")
    ACCEPTANCE_LINES[-1] += (f"; both random: {hits}/{runs} (rate {rate:.2e}, limit {3 * bound:.2e}); "
                             f"{elapsed:.1f}s (limit 60s)")


# 5


def lcg_port(boot_seconds):
    # reference values, written out independently of the library
    x1 = (16807 * (boot_seconds + 1)) % 2147483647
    return 49152 + x1 % 16384


def test_time_seeded_port():
    lab = Lab("tenda-like", {}, seed=0)
    ports = []
    for _ in range(10):
        lab.reboot(downtime=3600)
        ports.append(lab.forwarder.state.boot_port)
    delay = get_profile("tenda-like").daemon_start_delay
    values = [boot_time_port(t) for t in range(101)]
    oracle_ok = values == [lcg_port(t) for t in range(101)] and boot_time_port(7) == 52536
    distinct = len(set(values))
    ok = len(set(ports)) == 1 and ports[0] == lcg_port(delay) and oracle_ok and distinct >= 95
    report(5, "time-seeded port", ok,
           f"10 reboots -> ports {sorted(set(ports))}; {distinct} distinct over boot times 0..100; "
           f"oracle {'matches' if oracle_ok else 'MISMATCH'}")


# 6


def test_cd_flow():
    results = {}
    for base in ("dproxy-like", "dnrd-like", "tenda-like", "dnsmasq-like"):
        for policy in ("forward_and_cache", "clear_flag", "forward_no_cache"):
            p = replace(get_profile(base), name=f"{base}/{policy}", cd_policy=policy)
            results[(base, policy)] = run_cd_disable_attack(p, seed=0).success
    wrong = [k for k, v in results.items() if v != (k[1] == "forward_and_cache")]
    ok = not wrong
    report(6, "cd flow", ok,
           f"{sum(results.values())}/{len(results)} succeeded, all with forward_and_cache"
           if ok else f"unexpected outcome for {wrong}")


# 7

_SPECIAL = [0x00, 0x2E, 0x5C, 0x2A, 0xFF]


def random_label(rng):
    label = bytearray(rng.randbytes(rng.randint(1, 20)))
    # about a third of labels get one of the bytes that matter spliced in
    if rng.random() < 0.3:
        label[rng.randrange(len(label))] = rng.choice(_SPECIAL)
    return bytes(label)


def random_name(rng, max_labels=4):
    labels = []
    for _ in range(rng.randint(0, max_labels)):
        label = random_label(rng)
        if sum(len(l) + 1 for l in labels) + len(label) + 2 > 255:
            break
        labels.append(label)
    return DnsName(tuple(labels))


def random_record(rng):
    owner = random_name(rng, 3)
    ttl = rng.randint(0, 2**31 - 1)
    kind = rng.randrange(6)
    if kind == 0:
        return ResourceRecord(owner, RRType.A, RRClass.IN, ttl, str(ipaddress.IPv4Address(rng.getrandbits(32))))
    if kind == 1:
        return ResourceRecord(owner, RRType.AAAA, RRClass.IN, ttl, str(ipaddress.IPv6Address(rng.getrandbits(128))))
    if kind == 2:
        return ResourceRecord(owner, RRType.CNAME, RRClass.IN, ttl, random_name(rng, 3))
    if kind == 3:
        return ResourceRecord(owner, RRType.TXT, RRClass.IN, ttl, (rng.randbytes(rng.randint(0, 30)),))
    if kind == 4:
        nums = [rng.getrandbits(32) for _ in range(5)]
        return ResourceRecord(owner, RRType.SOA, RRClass.IN, ttl, Soa(random_name(rng, 2), random_name(rng, 2), *nums))
    return ResourceRecord(owner, 99, RRClass.IN, ttl, rng.randbytes(rng.randint(0, 20)))


def random_message(rng):
    msg = DnsMessage(txid=rng.getrandbits(16), opcode=rng.randrange(16), rcode=rng.randrange(16),
                     **{k: rng.random() < 0.5 for k in ("qr", "aa", "tc", "rd", "ra", "z", "ad", "cd")})
    msg.question = [Question(random_name(rng), rng.choice([1, 5, 16, 28]), rng.choice([1, 3]))
                    for _ in range(rng.randint(0, 1))]
    msg.answers = [random_record(rng) for _ in range(rng.randint(0, 2))]
    msg.authority = [random_record(rng) for _ in range(rng.randint(0, 1))]
    return msg


def test_codec_properties():
    rng = random.Random(20240101)
    n = 100_000
    start = time.perf_counter()
    name_fail = msg_fail = div_fail = 0
    for _ in range(n):
        name = random_name(rng, 6)
        back, _ = decode_name_strict(encode_name(name), 0)
        name_fail += back.labels != name.labels
        special = any(b"\x00" in l or b"." in l for l in name.labels)
        diverged = DnsName.from_flat(name_to_naive_string(name)).labels != name.labels
        div_fail += diverged != special
    for _ in range(n):
        msg = random_message(rng)
        wire = serialize_message(msg)
        back = parse_message(wire)
        msg_fail += back != msg or serialize_message(back) != wire
    elapsed = time.perf_counter() - start
    ok = name_fail == msg_fail == div_fail == 0 and elapsed < 30.0
    report(7, "codec properties", ok,
           f"{n} names ({name_fail} failures), {n} messages ({msg_fail} failures), "
           f"divergence mismatches {div_fail}, {elapsed:.1f}s (limit 30s)")


if __name__ == "__main__":
    import sys

    failed = 0
    for fn in (test_xdri_determinism, test_payload_matrix, test_upstream_immunity, test_entropy_scaling,
               test_time_seeded_port, test_cd_flow, test_codec_properties):
        try:
            fn()
        except AssertionError:
            failed += 1
    sys.exit(1 if failed else 0)
