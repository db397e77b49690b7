import random

import pytest
from hypothesis import given, settings

from fwdlab.authns import (
    AuthoritativeServer,
    ParseError,
    dump_zone_script,
    incomplete_cname_zone_text,
    injection_zone,
    load_zone_script,
    randomized_probe_name,
    static_zone_text,
)
from fwdlab.wire import (
    NameTooLong,
    Rcode,
    RRClass,
    RRType,
    make_query,
    name_from_presentation as N,
    parse_message,
    serialize_message,
    signature_status,
)

from strategies import ipv4


def ask(server, qname, rrtype=RRType.A, **kw):
    return server.answer(make_query(N(qname) if isinstance(qname, str) else qname, rrtype, 1, **kw))


def plain(msg):
    return [(str(r.name), r.rrtype, r.rdata) for r in msg.answers if r.rrtype != RRType.RRSIG]


@pytest.fixture
def injection():
    return AuthoritativeServer([injection_zone()])


class TestInjectionZone:
    def test_zero_byte_alias(self, injection):
        msg = ask(injection, "abc.zero.test.com")
        assert plain(msg) == [("abc.zero.test.com.", RRType.CNAME, N("abc.www.target.com\\000.test.com"))]

    def test_zero_byte_record(self, injection):
        msg = ask(injection, "abc.www.target.com\\000.test.com")
        assert plain(msg) == [("abc.www.target.com\\000.test.com.", RRType.A, "6.6.6.6")]

    def test_dot_alias_and_record(self, injection):
        assert plain(ask(injection, "abc.dot.test.com"))[0][2] == N("abc.www\\.target.com")
        assert plain(ask(injection, "abc.www\\.target.com"))[0][2] == "6.6.6.6"

    def test_baseline(self, injection):
        assert plain(ask(injection, "abc.www.target.com")) == [("abc.www.target.com.", RRType.A, "1.1.1.1")]

    def test_signatures(self, injection):
        good = [signature_status(r) for r in ask(injection, "abc.www.target.com").answers if r.rrtype == RRType.RRSIG]
        bad = [signature_status(r) for r in ask(injection, "abc.dnssec.test.com").answers if r.rrtype == RRType.RRSIG]
        assert good == [(RRType.A, True)] and bad == [(RRType.A, False)]

    def test_nxdomain_and_nodata(self, injection):
        nx = ask(injection, "nothing.test.com")
        assert nx.rcode == Rcode.NXDOMAIN and nx.authority[0].rrtype == RRType.SOA
        nodata = ask(injection, "abc.www.target.com", RRType.TXT)
        assert nodata.rcode == Rcode.NOERROR and not nodata.answers

    def test_refused_out_of_zone(self, injection):
        assert ask(injection, "example.org").rcode == Rcode.REFUSED

    def test_aa_set(self, injection):
        assert ask(injection, "abc.www.target.com").aa

    def test_wildcard_is_one_label(self, injection):
        assert ask(injection, "a.b.www.target.com").rcode == Rcode.NXDOMAIN


class TestIncompleteCname:
    def test_schedule(self):
        srv = AuthoritativeServer([load_zone_script(incomplete_cname_zone_text())])
        hidden = "www.victim.com\\000.attacker.com"
        alias = ask(srv, "x1.sub.attacker.com")
        assert plain(alias) == [("x1.sub.attacker.com.", RRType.CNAME, N(hidden))]
        first = ask(srv, hidden)
        assert not first.answers and first.authority[0].rdata.minimum == 0
        second = ask(srv, hidden)
        assert plain(second) == [(hidden.replace("\\000", "\\000") + ".", RRType.A, "6.6.6.6")]
        assert plain(ask(srv, hidden)) == plain(second)

    def test_counters_are_per_type_and_reset(self):
        srv = AuthoritativeServer([load_zone_script(incomplete_cname_zone_text())])
        hidden = "www.victim.com\\000.attacker.com"
        ask(srv, hidden, RRType.AAAA)
        assert not ask(srv, hidden).answers
        srv.reload()
        assert not ask(srv, hidden).answers


class TestScriptText:
    def test_round_trip_injection(self):
        z = injection_zone()
        again = load_zone_script(dump_zone_script(z))
        assert again.apex == z.apex and again.signed
        assert [(e.owner, e.rrtype, e.bogus) for e in again.entries] == [
            (e.owner, e.rrtype, e.bogus) for e in z.entries
        ]

    def test_comments_and_relative(self):
        z = load_zone_script("$ORIGIN test.com.\nwww 60 IN A 1.2.3.4 ; trailing\n; whole line\n")
        assert z.entries[0].owner == N("www.test.com")

    @pytest.mark.parametrize("text", [
        "www.test.com. 60 IN A 1.2.3.4\n",
        "$ORIGIN test.com.\nwww.other.com. 60 IN A 1.2.3.4\n",
        "$ORIGIN test.com.\nwww 60 IN A 300.2.3.4\n",
        "$ORIGIN test.com.\nwww 60 IN BOGUS x\n",
        "$ORIGIN test.com.\nwww 60 IN A 1.2.3.4 | color=red\n",
    ])
    def test_errors(self, text):
        with pytest.raises(ParseError):
            load_zone_script(text)

    def test_error_line_number(self):
        with pytest.raises(ParseError) as e:
            load_zone_script("$ORIGIN test.com.\nok 60 IN A 1.2.3.4\nbad 60 IN A nope\n")
        assert e.value.lineno == 3

    @settings(max_examples=50)
    @given(ipv4)
    def test_static_zone(self, addr):
        srv = AuthoritativeServer([load_zone_script(static_zone_text("v.com", [("www.v.com", 120, addr)]))])
        msg = ask(srv, "www.v.com")
        assert plain(msg) == [("www.v.com.", RRType.A, addr)] and msg.answers[0].ttl == 120


class TestProbeNames:
    def test_shape(self):
        name = randomized_probe_name("zero.test.com", random.Random(1))
        assert len(name.labels[0]) == 12 and name.parent() == N("zero.test.com")
        assert all(c in b"abcdefghijklmnopqrstuvwxyz0123456789" for c in name.labels[0])

    def test_distinct(self):
        rng = random.Random(2)
        assert len({randomized_probe_name("t.com", rng) for _ in range(1000)}) == 1000

    def test_no_room(self):
        base = ".".join(["a" * 60] * 4)  # wire length 246
        with pytest.raises(NameTooLong):
            randomized_probe_name(base, random.Random(0))


class TestServerBytes:
    def test_handle_round_trip(self, injection):
        out = injection.handle(serialize_message(make_query("abc.www.target.com", txid=77)))
        assert parse_message(out).txid == 77

    def test_responses_ignored(self, injection):
        q = make_query("abc.www.target.com")
        assert injection.handle(serialize_message(q.reply())) is None

    def test_garbage(self, injection):
        assert injection.handle(b"\x00") is None
        assert parse_message(injection.handle(b"\x00\x09" + b"\xff" * 20)).rcode == Rcode.FORMERR

    def test_chaos_refused(self, injection):
        assert ask(injection, "abc.www.target.com", rrclass=RRClass.CH).rcode == Rcode.REFUSED
