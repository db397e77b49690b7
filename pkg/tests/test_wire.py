import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fwdlab.wire import (
    FLAG_AD,
    FLAG_CD,
    BadEscape,
    DnsMessage,
    DnsName,
    EmptyLabel,
    LabelTooLong,
    MalformedRecord,
    NameTooLong,
    OffsetOutOfRange,
    PointerLoop,
    Question,
    RRClass,
    RRType,
    ResourceRecord,
    Truncated,
    TruncatedName,
    clear_flag_bits,
    decode_name_strict,
    encode_name,
    frame,
    get_txid,
    make_query,
    make_signature,
    name_from_presentation,
    name_to_naive_string,
    name_to_presentation,
    parse_lenient,
    parse_message,
    question_mismatch,
    serialize_message,
    set_txid,
    signature_status,
    unframe,
)

from strategies import messages, names


def N(*labels):
    return DnsName(tuple(l.encode("latin-1") if isinstance(l, str) else l for l in labels))


class TestEncodeName:
    def test_plain_name(self):
        assert encode_name(N("www", "example", "com")) == b"\x03www\x07example\x03com\x00"

    def test_root(self):
        assert encode_name(DnsName()) == b"\x00"

    def test_special_bytes_copied_verbatim(self):
        # 11-byte label: 'victim' '.' 'com' NUL
        assert encode_name(N("victim.com\x00")) == b"\x0bvictim.com\x00\x00"

    def test_label_too_long(self):
        with pytest.raises(LabelTooLong):
            N("a" * 64)

    def test_label_of_63_is_fine(self):
        assert len(encode_name(N("a" * 63))) == 65

    def test_name_too_long(self):
        # 4 * (63 + 1) + 1 = 257 > 255
        with pytest.raises(NameTooLong):
            N(*["a" * 63] * 4)

    def test_name_of_255_is_fine(self):
        # 3 * 64 + (61 + 1) + 1 = 255
        assert N(*["a" * 63] * 3, "b" * 61).wire_length == 255

    def test_empty_label_rejected(self):
        with pytest.raises(EmptyLabel):
            DnsName((b"a", b""))


class TestDecodeName:
    def test_pointer_to_root(self):
        name, end = decode_name_strict(b"\x00\xc0\x00", 1)
        assert name == DnsName() and end == 3

    def test_pointer_then_suffix(self):
        buf = b"\x03com\x00" + b"\x03www\xc0\x00"
        name, end = decode_name_strict(buf, 5)
        assert name == N("www", "com") and end == len(buf)

    def test_self_pointer_loops(self):
        with pytest.raises(PointerLoop):
            decode_name_strict(b"\xc0\x00", 0)

    def test_truncated(self):
        with pytest.raises(TruncatedName):
            decode_name_strict(b"\x05ab", 0)

    def test_offset_out_of_range(self):
        with pytest.raises(OffsetOutOfRange):
            decode_name_strict(b"\x00", 3)

    def test_keeps_raw_bytes(self):
        name, _ = decode_name_strict(b"\x04co.\x00\x00", 0)
        assert name.labels == (b"co.\x00",)

    @given(names())
    def test_round_trip(self, name):
        wire = encode_name(name)
        decoded, end = decode_name_strict(wire, 0)
        assert decoded.labels == name.labels and end == len(wire)


class TestNaiveString:
    def test_zero_byte_terminates(self):
        assert name_to_naive_string(N("victim", "com\x00", "attacker", "com")) == b"victim.com"

    def test_dot_inside_label(self):
        assert name_to_naive_string(N("www.victim", "com")) == b"www.victim.com"

    def test_plain(self):
        assert name_to_naive_string(N("www", "example", "com")) == b"www.example.com"

    def test_root(self):
        assert name_to_naive_string(DnsName()) == b""

    @given(names())
    def test_diverges_exactly_on_zero_or_dot(self, name):
        special = any(b"\x00" in l or b"." in l for l in name.labels)
        split_again = DnsName.from_flat(name_to_naive_string(name)).labels
        assert (split_again != name.labels) == special


class TestPresentation:
    def test_escaped_dot(self):
        assert name_from_presentation("www\\.target.com.").labels == (b"www.target", b"com")

    def test_decimal_escape(self):
        assert name_from_presentation("www.target.com\\000.test.com.").labels == (
            b"www", b"target", b"com\x00", b"test", b"com",
        )

    def test_plain_round_trip(self):
        assert name_to_presentation(name_from_presentation("a.b.")) == "a.b."

    def test_root(self):
        assert name_from_presentation(".") == DnsName()
        assert name_to_presentation(DnsName()) == "."

    def test_escapes_on_output(self):
        assert name_to_presentation(N("a.b\\", "c\x00\xff")) == "a\\.b\\\\.c\\000\\255."

    @pytest.mark.parametrize("bad", ["a\\", "a\\12", "a\\999.com", "a\\1x2"])
    def test_bad_escape(self, bad):
        with pytest.raises(BadEscape):
            name_from_presentation(bad)

    @pytest.mark.parametrize("bad", ["a..b", ".a", ""])
    def test_empty_label(self, bad):
        with pytest.raises(EmptyLabel):
            name_from_presentation(bad)

    @given(names())
    def test_inverse(self, name):
        assert name_from_presentation(name_to_presentation(name)).labels == name.labels


class TestNameEquality:
    def test_ascii_case_insensitive(self):
        assert N("WWW", "Example") == N("www", "example")
        assert hash(N("WWW")) == hash(N("www"))

    def test_other_bytes_exact(self):
        assert N("\xc4") != N("\xe4")
        assert N("www.target", "com") != N("www", "target", "com")


class TestMessages:
    def test_version_bind_chaos(self):
        wire = serialize_message(make_query("version.bind", RRType.TXT, 7, rrclass=RRClass.CH))
        assert wire[-4:] == b"\x00\x10\x00\x03"

    def test_count_mismatch_is_truncated(self):
        header = struct.pack(">HHHHHH", 0x1234, 0x8180, 0, 1, 0, 0)
        with pytest.raises(Truncated):
            parse_message(header)

    def test_short_header(self):
        with pytest.raises(Truncated):
            parse_message(b"\x00" * 11)

    def test_malformed_record_keeps_partial(self):
        msg = make_query("a.example", txid=9).reply()
        msg.answers = [ResourceRecord(N("a", "example"), RRType.A, RRClass.IN, 5, "1.2.3.4")]
        wire = bytearray(serialize_message(msg))
        # a second answer: an A record with three bytes of rdata
        wire[7] = 2
        wire += b"\x00\x00\x01\x00\x01\x00\x00\x00\x05\x00\x03\x01\x02\x03"
        with pytest.raises(MalformedRecord) as err:
            parse_message(bytes(wire))
        assert err.value.partial.answers == msg.answers
        got, problem = parse_lenient(bytes(wire))
        assert got.txid == 9 and isinstance(problem, MalformedRecord)

    def test_overrun_is_truncated_with_partial(self):
        msg = make_query("a.example", txid=9).reply()
        wire = bytearray(serialize_message(msg))
        wire[7] = 1
        wire += b"\x00\x00\x01\x00\x01\x00\x00\x00\x05\x00\x09\x01"
        with pytest.raises(Truncated) as err:
            parse_message(bytes(wire))
        assert err.value.partial.question == msg.question

    def test_cd_and_ad_bits(self):
        msg = DnsMessage(txid=1, ad=True, cd=True)
        flags = struct.unpack(">H", serialize_message(msg)[2:4])[0]
        assert flags & FLAG_CD and flags & FLAG_AD
        cleared = clear_flag_bits(serialize_message(msg), FLAG_CD | FLAG_AD)
        again = parse_message(cleared)
        assert not again.cd and not again.ad

    def test_header_counts(self):
        msg = make_query("x.y", edns=True)
        msg.answers = [ResourceRecord(N("x", "y"), RRType.A, RRClass.IN, 1, "9.9.9.9")] * 3
        qd, an, ns, ar = struct.unpack(">HHHH", serialize_message(msg)[4:12])
        assert (qd, an, ns, ar) == (1, 3, 0, 1)

    def test_opt_preserved(self):
        msg = parse_message(serialize_message(make_query("x.y", edns=True)))
        assert msg.opt is not None and msg.opt.rrclass == 1232

    def test_unknown_type_is_opaque(self):
        rr = ResourceRecord(N("x"), 65280, RRClass.IN, 3, b"\x01\x02\x03")
        msg = DnsMessage(answers=[rr])
        assert parse_message(serialize_message(msg)).answers == [rr]

    def test_txid_helpers(self):
        wire = serialize_message(make_query("a", txid=0xBEEF))
        assert get_txid(wire) == 0xBEEF
        assert get_txid(set_txid(wire, 0x0102)) == 0x0102
        assert set_txid(wire, 0x0102)[2:] == wire[2:]

    def test_question_mismatch(self):
        q = make_query("a.b")
        r = make_query("A.B").reply()
        assert not question_mismatch(q, r)
        r.question = [Question(N("a", "b\x00"))]
        assert question_mismatch(q, r)

    @given(messages())
    def test_round_trip(self, msg):
        wire = serialize_message(msg)
        back = parse_message(wire)
        assert back == msg
        assert serialize_message(back) == wire

    @settings(max_examples=50)
    @given(st.binary(max_size=80))
    def test_garbage_never_crashes(self, data):
        msg, err = parse_lenient(data)
        assert msg is not None or err is not None


class TestFraming:
    def test_frame_round_trip(self):
        payload = b"hello dns"
        data, rest = unframe(frame(payload) + b"tail")
        assert data == payload and rest == b"tail"

    def test_short_frame(self):
        with pytest.raises(Truncated):
            unframe(b"\x00\x05abc")


class TestSignatures:
    def test_validity_flag(self):
        rr = ResourceRecord(N("a"), RRType.A, RRClass.IN, 5, "1.1.1.1")
        assert signature_status(make_signature(rr, True)) == (RRType.A, True)
        assert signature_status(make_signature(rr, False)) == (RRType.A, False)
