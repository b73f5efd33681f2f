import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from wpki import codec
from wpki.authority import Reason, RevokeCommand
from wpki.codec import Blob, Text, TextList, U8, U64
from wpki.enrollment import Credentials, RegistrationRequest
from wpki.errors import (
    CodecError,
    FieldTooLarge,
    InvariantViolation,
    KindMismatch,
    Malformed,
    NonCanonical,
    PayloadTooLarge,
    Truncated,
    UnknownKind,
    UnknownTag,
)
from wpki.net import ErrorReply
from wpki.repository import FetchCommand

from strategies import ENTITIES

# Hand-assembled encodings: tag(1) length(2, big-endian) value, tags ascending;
# frames are length(4, big-endian, covering kind + payload) kind(1) payload.
IMEI = b"IMEI-490154203237518"
REGISTRATION_PAYLOAD = b"\x33\x00\x14" + IMEI
REGISTRATION_FRAME = b"\x00\x00\x00\x18\x01" + REGISTRATION_PAYLOAD
REVOKE_PAYLOAD = (b"\x02\x00\x08" + (5).to_bytes(8, "big")
                  + b"\x43\x00\x01\x01")
FETCH_LATEST_FRAME = b"\x00\x00\x00\x01\x0c"
CREDENTIALS_PAYLOAD = (b"\x30\x00\x09u00000001"
                       + b"\x34\x00\x10ABCDEFGHIJKLMNOP"
                       + b"\x35\x00\x03pw1")


def test_registration_fixture():
    req = RegistrationRequest(IMEI.decode())
    assert codec.encode_entity(req) == REGISTRATION_PAYLOAD
    assert codec.frame_entity(req) == REGISTRATION_FRAME
    kind, payload = codec.deframe(REGISTRATION_FRAME)
    assert kind == 0x01
    assert codec.decode_entity(payload, RegistrationRequest, kind=kind) == req


def test_revoke_fixture():
    cmd = RevokeCommand(5, int(Reason.KEY_COMPROMISE))
    assert codec.encode_entity(cmd) == REVOKE_PAYLOAD
    assert codec.decode_entity(REVOKE_PAYLOAD, RevokeCommand) == cmd


def test_absent_optional_fields_are_omitted():
    assert codec.frame_entity(FetchCommand()) == FETCH_LATEST_FRAME
    assert codec.decode_entity(b"", FetchCommand) == FetchCommand(None)


def test_credentials_fixture():
    creds = Credentials("u00000001", "pw1", "ABCDEFGHIJKLMNOP")
    assert codec.encode_entity(creds) == CREDENTIALS_PAYLOAD


# -- TLV layer -----------------------------------------------------------------

def test_encode_tlv_sorts():
    assert codec.encode_tlv([(0x05, b"b"), (0x01, b"a")]) == b"\x01\x00\x01a\x05\x00\x01b"


def test_encode_tlv_rejects_duplicates():
    with pytest.raises(InvariantViolation):
        codec.encode_tlv([(0x01, b"a"), (0x01, b"b")])


def test_decode_out_of_order():
    with pytest.raises(NonCanonical):
        codec.decode_tlv(b"\x05\x00\x01b\x01\x00\x01a")


def test_decode_duplicate():
    with pytest.raises(NonCanonical):
        codec.decode_tlv(b"\x01\x00\x01a\x01\x00\x01a")


def test_decode_unknown_tag():
    with pytest.raises(UnknownTag):
        codec.decode_tlv(b"\x7f\x00\x00")


def test_decode_tag_foreign_to_entity():
    # 0x02 is a registered tag, but not one a RegistrationRequest carries
    with pytest.raises(UnknownTag):
        codec.decode_entity(b"\x02\x00\x08" + bytes(8) + REGISTRATION_PAYLOAD, RegistrationRequest)


# cutting at 11 leaves a complete serial TLV, which is a valid command by itself
@pytest.mark.parametrize("cut", [c for c in range(1, len(REVOKE_PAYLOAD)) if c != 11])
def test_decode_truncated(cut):
    with pytest.raises(Malformed):
        codec.decode_entity(REVOKE_PAYLOAD[:cut], RevokeCommand)


def test_missing_mandatory_field():
    with pytest.raises(Malformed):
        codec.decode_entity(b"", RegistrationRequest)


def test_kind_mismatch():
    with pytest.raises(KindMismatch):
        codec.decode_entity(REGISTRATION_PAYLOAD, RegistrationRequest, kind=0x02)


def test_entity_invariants_checked_at_construction():
    with pytest.raises(InvariantViolation):
        RegistrationRequest("")
    with pytest.raises(InvariantViolation):
        Credentials("u", "p", "lowercase0123456")


# -- value codecs ----------------------------------------------------------------

def test_uint_bounds():
    with pytest.raises(InvariantViolation):
        U8.check(256, "x")
    with pytest.raises(InvariantViolation):
        U64.check(-1, "x")
    with pytest.raises(InvariantViolation):
        U8.check(True, "x")
    with pytest.raises(Malformed):
        U64.decode(b"\x00" * 7)


def test_text_limits():
    with pytest.raises(InvariantViolation):
        Text(4).check("abcde", "x")
    with pytest.raises(InvariantViolation):
        Text(8).check("ééééé", "x")  # 10 bytes
    with pytest.raises(Malformed):
        Text().decode(b"\xff")


def test_text_list():
    codec_ = TextList()
    assert codec_.encode(("ab", "")) == b"\x02ab\x00"
    assert codec_.decode(b"\x02ab\x00") == ("ab", "")
    with pytest.raises(Malformed):
        codec_.decode(b"\x05ab")
    with pytest.raises(Malformed):
        codec_.decode(b"")


def test_blob_limits():
    with pytest.raises(InvariantViolation):
        Blob(size=4).check(b"abc", "x")
    with pytest.raises(FieldTooLarge):
        Blob(max_bytes=2).check(b"abc", "x")


def test_value_longer_than_length_field():
    with pytest.raises(FieldTooLarge):
        codec.encode_tlv([(0x01, bytes(0x10000))])


# -- framing ------------------------------------------------------------------

def test_deframe_stream_leaves_rest():
    stream = io.BytesIO(REGISTRATION_FRAME + FETCH_LATEST_FRAME)
    assert codec.deframe(stream)[0] == 0x01
    assert codec.deframe(stream) == (0x0C, b"")


@pytest.mark.parametrize("cut", [0, 2, 4, 10, len(REGISTRATION_FRAME) - 1])
def test_deframe_truncated(cut):
    with pytest.raises(Truncated):
        codec.deframe(REGISTRATION_FRAME[:cut])


def test_deframe_zero_length():
    with pytest.raises(Malformed):
        codec.deframe(b"\x00\x00\x00\x00")


def test_payload_limit():
    header = (codec.DEFAULT_MAX_PAYLOAD + 2).to_bytes(4, "big")
    with pytest.raises(PayloadTooLarge):
        codec.deframe(header + b"\x01")
    with pytest.raises(PayloadTooLarge):
        codec.frame(0x01, bytes(11), max_payload=10)
    # exactly at the limit is fine
    kind, payload = codec.deframe(codec.frame(0x01, bytes(10)), max_payload=10)
    assert payload == bytes(10)


def test_frame_unknown_kind():
    with pytest.raises(UnknownKind):
        codec.frame(0x42, b"")
    with pytest.raises(UnknownKind):
        codec.entity_class(0x42)


def test_error_reply_carries_codes():
    reply = ErrorReply.from_exception(UnknownTag("tag 0x7f"))
    assert isinstance(reply.to_exception(), UnknownTag)
    assert reply.to_exception().detail == "tag 0x7f"


# -- properties -----------------------------------------------------------------

@pytest.mark.parametrize("cls", list(ENTITIES), ids=lambda c: c.__name__)
def test_roundtrip_structured(cls):
    @settings(max_examples=60)
    @given(ENTITIES[cls])
    def check(x):
        data = codec.encode_entity(x)
        y = codec.decode_entity(data, cls)
        assert y == x
        assert codec.encode_entity(y) == data
        assert codec.deframe(codec.frame_entity(x)) == (cls.KIND, data)

    check()


@settings(max_examples=300)
@given(st.binary(max_size=64))
def test_decoder_is_canonical_on_garbage(data):
    # whatever the decoder accepts must re-encode to exactly the same bytes
    try:
        value = codec.decode_entity(data, RevokeCommand)
    except CodecError:
        return
    assert codec.encode_entity(value) == data
