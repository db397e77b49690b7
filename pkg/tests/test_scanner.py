import json

import pytest

from fwdlab.forwarder import BUILTIN_PROFILES
from fwdlab.scanner import (
    LiveTarget,
    ScanReport,
    SimTarget,
    VARIANTS,
    parse_target,
    render_table,
    scan_target,
)

EXPECTED = {
    "dproxy-like": ["a", "b", "d", "e"],
    "dnrd-like": ["a"],
    "tenda-like": ["a", "d", "e"],
    "dnsmasq-like": [],
    "static-port-nocache": ["d"],
    "sequential-txid": ["c"],
    "nat-rule": [],
}


@pytest.fixture(scope="module")
def reports():
    return {p: scan_target(SimTarget(p, seed=0)) for p in EXPECTED}


@pytest.mark.parametrize("profile", sorted(EXPECTED))
def test_letters(profile, reports):
    assert reports[profile].letters() == EXPECTED[profile]


def test_dproxy_verdicts(reports):
    r = reports["dproxy-like"]
    # the map is keyed by the question, so only the direct payloads land on the victim
    assert r.misinterpretation == {"zero/direct": "vulnerable", "zero/cname": "safe",
                                   "dot/direct": "vulnerable", "dot/cname": "safe"}
    assert (r.txid, r.port, r.cd_forwarding) == ("forwarded", "random_at_boot", "vulnerable")
    assert r.capabilities.has_cache and r.capabilities.tcp is False and r.capabilities.edns_ok is False


def test_dnsmasq_verdicts(reports):
    r = reports["dnsmasq-like"]
    assert set(r.misinterpretation.values()) == {"safe"}
    assert (r.txid, r.port, r.cd_forwarding) == ("random", "random", "safe")
    assert r.capabilities.version_bind == "dnsmasq-2.78" and r.capabilities.tcp


def test_bintec_cname_only(reports):
    r = scan_target(SimTarget("bintec-like"))
    assert {v for v, s in r.misinterpretation.items() if s == "vulnerable"} == {"zero/cname", "dot/cname"}
    assert r.capabilities.cname_merge


def test_tenda_clock_reset_looks_static(reports):
    assert reports["tenda-like"].port == "static"


def test_exit_codes(reports):
    assert reports["dproxy-like"].exit_code() == 1
    assert reports["dnsmasq-like"].exit_code() == 0


def test_json_schema(reports):
    data = json.loads(reports["dproxy-like"].dumps())
    assert set(data) == {"target", "verdicts", "evidence", "started_at"}
    assert data["target"] == "sim:dproxy-like"
    assert set(data["verdicts"]["misinterpretation"]) == set(VARIANTS)
    assert data["verdicts"]["letters"] == EXPECTED["dproxy-like"]
    assert all(isinstance(v, list) for v in data["evidence"].values())


def test_scan_is_deterministic():
    a = scan_target(SimTarget("dproxy-like", seed=4), seed=4)
    b = scan_target(SimTarget("dproxy-like", seed=4), seed=4)
    assert a.dumps() == b.dumps()


@pytest.mark.parametrize("profile", ["dproxy-like", "dnrd-like", "tenda-like", "bintec-like"])
def test_non_destructive(profile):
    target = SimTarget(profile, reboot=False)
    scan_target(target)
    cache = target.lab.forwarder.state.cache
    keys = list(cache.qname_addr) + list(cache.qname_packet)
    keys += [b".".join(k[0]) for k, _ in cache.record_cache.items()]
    # every entry sits under a randomized probe label, never a real name
    assert keys and all(len(k.split(b".")[0]) == 12 for k in keys)


def test_no_tap_unobservable():
    r = scan_target(SimTarget("sequential-txid", tap=False))
    assert (r.txid, r.port) == ("unobservable", "unobservable")
    assert r.exit_code() == 0


def test_no_reboot_cannot_rule_out_boot_time():
    r = scan_target(SimTarget("dproxy-like", reboot=False))
    assert r.port == "static" and any("reboot" in line for line in r.evidence["port"])


def test_baseline_failure_inconclusive():
    class Dead:
        name = "dead"
        test_zone = "test.com"
        target_zone = "target.com"
        tap = None
        reboot_hook = None

        def exchange(self, payload, transport="udp", timeout=3.0):
            return None

        def now(self):
            return "1970-01-01T00:00:00+00:00"

    r = scan_target(Dead(), timeout=0.01)
    assert not r.baseline_ok and r.exit_code() == 2 and r.letters() == []


def test_custom_zones():
    r = scan_target(SimTarget("dproxy-like", test_zone="evil.org", target_zone="bank.org"))
    assert r.letters() == EXPECTED["dproxy-like"]


def test_parse_target():
    assert isinstance(parse_target("sim:dproxy-like"), SimTarget)
    t = parse_target("10.0.0.1:5353")
    assert isinstance(t, LiveTarget) and (t.host, t.port) == ("10.0.0.1", 5353)
    assert parse_target("10.0.0.1").port == 53


def test_render_table(reports):
    text = render_table([reports["dproxy-like"], reports["dnsmasq-like"]])
    lines = text.splitlines()
    assert lines[0].startswith("target") and len(lines) == 3
    assert "(a),(b),(d),(e)" in lines[1]


def test_letter_b_needs_cache():
    r = ScanReport("x", "t", txid="forwarded")
    assert r.letters() == ["b"]
    r.capabilities.has_cache = False
    assert r.letters() == []


def test_all_builtins_scan():
    for name in BUILTIN_PROFILES:
        assert scan_target(SimTarget(name)).baseline_ok
