import pytest

from fwdlab.authns import injection_zone
from fwdlab.forwarder import get_profile
from fwdlab.live import authoritative_service, forwarder_service
from fwdlab.scanner import LiveTarget
from fwdlab.wire import RRType, make_query, name_from_presentation as N, parse_message, serialize_message


@pytest.fixture
def ns():
    svc = authoritative_service([injection_zone()], ("127.0.0.1", 0)).start()
    yield svc
    svc.shutdown()


def query(target, name, transport="udp", txid=7):
    data = target.exchange(serialize_message(make_query(N(name), RRType.A, txid)), transport=transport, timeout=2)
    return parse_message(data)


def addrs(msg):
    return [r.rdata for r in msg.answers if r.rrtype == RRType.A]


def test_authoritative_udp_and_tcp(ns):
    t = LiveTarget(*ns.address)
    assert addrs(query(t, "x.www.target.com")) == ["1.1.1.1"]
    assert addrs(query(t, "x.www.target.com\\000.test.com", "tcp")) == ["6.6.6.6"]


def test_naive_forwarder_poisoned_over_sockets(ns):
    fwd = forwarder_service(get_profile("dproxy-like"), ns.address, ("127.0.0.1", 0)).start()
    try:
        t = LiveTarget(*fwd.address)
        assert addrs(query(t, "x.www.target.com\\000.test.com")) == ["6.6.6.6"]
        assert addrs(query(t, "x.www.target.com", txid=8)) == ["6.6.6.6"]
    finally:
        fwd.shutdown()


def test_strict_forwarder_not_poisoned(ns):
    fwd = forwarder_service(get_profile("dnsmasq-like"), ns.address, ("127.0.0.1", 0)).start()
    try:
        t = LiveTarget(*fwd.address)
        query(t, "x.www.target.com\\000.test.com")
        assert addrs(query(t, "x.www.target.com", txid=8)) == ["1.1.1.1"]
        assert addrs(query(t, "y.www.target.com", "tcp")) == ["1.1.1.1"]
    finally:
        fwd.shutdown()


def test_no_tcp_profile():
    fwd = forwarder_service(get_profile("dproxy-like"), ("127.0.0.1", 9), ("127.0.0.1", 0))
    try:
        assert fwd.tcp is None
    finally:
        fwd.shutdown()


def test_unreachable_target():
    t = LiveTarget("127.0.0.1", 9)
    assert t.exchange(serialize_message(make_query("a.b")), timeout=0.2) is None
