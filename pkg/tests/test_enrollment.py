import dataclasses
import re

import pytest

from wpki import codec, crypto
from wpki.enrollment import (
    CertificateRequest,
    CertificateResponse,
    ClientState,
    ca_handle_registration,
    ca_issue,
    ca_verify_request,
    client_begin_registration,
    client_build_request,
    client_complete,
)
from wpki.errors import (
    EmptyDeviceId,
    Expired,
    InvalidKeypair,
    KeyMismatch,
    MacMismatch,
    PopFailure,
    RepositoryUnavailable,
    StorageFailure,
    UnknownReference,
)

IMEI = "IMEI-490154203237518"


@pytest.fixture
def creds(ca):
    return ca_handle_registration(ca, client_begin_registration(IMEI))


@pytest.fixture
def key(session_keys):
    return session_keys[crypto.CURVE_160][1]


def test_begin_registration_passthrough():
    assert client_begin_registration(IMEI).device_id == IMEI


@pytest.mark.parametrize("device_id", ["", "x" * 65])
def test_begin_registration_bounds(device_id):
    with pytest.raises(EmptyDeviceId):
        client_begin_registration(device_id)


def test_64_byte_device_id_is_fine():
    client_begin_registration("x" * 64)


def test_registration_is_fresh_each_time(ca):
    a = ca_handle_registration(ca, client_begin_registration(IMEI))
    b = ca_handle_registration(ca, client_begin_registration(IMEI))
    assert a.username != b.username and a.random_code != b.random_code
    assert (a.username, b.username) == ("u00000001", "u00000002")
    assert re.fullmatch(r"[A-Z0-9]{16}", a.random_code)
    assert re.fullmatch(r"[A-Za-z0-9]{16}", a.password)


def test_registration_is_persisted(ca, creds):
    with ca.store.locked() as store:
        record = store.registrations[creds.username]
    assert record.device_id == IMEI
    assert record.random_code == creds.random_code
    assert record.password_derivative == creds.mac_key()
    assert not record.consumed


def test_request_is_self_consistent(creds, key):
    req = client_build_request(creds, key, "mobile")
    assert req.reference_number == creds.username
    assert crypto.verify(req.pop_message(), req.pop_signature, req.public_key_info)
    assert crypto.mac_verify(creds.mac_key(), req.mac_message(), req.request_mac)


def test_password_never_on_the_wire(creds, key):
    req = client_build_request(creds, key, "mobile")
    assert creds.password.encode() not in codec.frame_entity(req)


def test_request_rejects_bad_keypair(creds, session_keys):
    a, b = session_keys[crypto.CURVE_160][:2]
    with pytest.raises(InvalidKeypair):
        client_build_request(creds, crypto.KeyPair(a.curve_id, b.public_key, a.private_key), "m")


def test_verify_happy_path(ca, creds, key):
    verified = ca_verify_request(ca, client_build_request(creds, key, "mobile"))
    assert verified.record.username == creds.username


def test_wrong_password_is_mac_mismatch(ca, creds, key):
    wrong = dataclasses.replace(creds, password=creds.password + "x")
    with pytest.raises(MacMismatch):
        ca_verify_request(ca, client_build_request(wrong, key, "mobile"))


def test_wrong_random_code_is_mac_mismatch(ca, creds, key):
    wrong = dataclasses.replace(creds, random_code="0" * 16)
    with pytest.raises(MacMismatch):
        ca_verify_request(ca, client_build_request(wrong, key, "mobile"))


def _swap_key(req, creds, other):
    # key swapped after signing, MAC recomputed so only the PoP is wrong
    bad = dataclasses.replace(req, public_key_info=other.public_info)
    return dataclasses.replace(bad, request_mac=crypto.mac(creds.mac_key(), bad.mac_message()))


def test_pop_by_another_key_fails(ca, creds, session_keys):
    a, b = session_keys[crypto.CURVE_160][1:3]
    req = _swap_key(client_build_request(creds, a, "mobile"), creds, b)
    with pytest.raises(PopFailure):
        ca_verify_request(ca, req)


def test_unknown_reference_wins_over_pop(ca, creds, session_keys):
    a, b = session_keys[crypto.CURVE_160][1:3]
    req = _swap_key(client_build_request(creds, a, "mobile"), creds, b)
    with pytest.raises(UnknownReference):
        ca_verify_request(ca, dataclasses.replace(req, reference_number="u99999999"))


def test_mac_checked_before_pop(ca, creds, session_keys):
    a, b = session_keys[crypto.CURVE_160][1:3]
    req = dataclasses.replace(client_build_request(creds, a, "mobile"),
                              public_key_info=b.public_info)
    with pytest.raises(MacMismatch):
        ca_verify_request(ca, req)


def test_issue_and_replay(ca, creds, key, now):
    req = client_build_request(creds, key, "mobile")
    resp = ca_issue(ca, ca_verify_request(ca, req), now)
    assert ca.repository.fetch_bytes(resp.certificate.serial) == codec.encode_entity(resp.certificate)
    assert ca.repository.fetch_certificate(resp.cert_url) == resp.certificate
    with pytest.raises(UnknownReference):
        ca_verify_request(ca, req)


def test_serials_are_monotone(ca, key, now):
    serials = []
    for _ in range(3):
        creds = ca_handle_registration(ca, client_begin_registration(IMEI))
        resp = ca_issue(ca, ca_verify_request(ca, client_build_request(creds, key, "m")), now)
        serials.append(resp.certificate.serial)
    assert serials == sorted(serials) and len(set(serials)) == 3


def test_repository_down_leaves_nothing_behind(ca, creds, key, monkeypatch):
    def down(cert):
        raise StorageFailure("disk gone")

    monkeypatch.setattr(ca.repository, "store_certificate", down)
    before = set(ca.repository.serials())
    with pytest.raises(RepositoryUnavailable):
        ca_issue(ca, ca_verify_request(ca, client_build_request(creds, key, "mobile")))
    assert set(ca.repository.serials()) == before
    with ca.store.locked() as store:
        assert set(store.issued) == before
        assert not store.registrations[creds.username].consumed
    # and the same registration can still be used once the repository is back
    monkeypatch.undo()
    ca_issue(ca, ca_verify_request(ca, client_build_request(creds, key, "mobile")))


def test_response_roundtrip(ca, creds, key, now):
    resp = ca_issue(ca, ca_verify_request(ca, client_build_request(creds, key, "mobile")), now)
    assert codec.decode_entity(codec.encode_entity(resp), CertificateResponse) == resp


# -- completion -------------------------------------------------------------------

@pytest.fixture
def response(ca, creds, key, now):
    return ca_issue(ca, ca_verify_request(ca, client_build_request(creds, key, "mobile")), now)


def test_complete_keeps_url_not_certificate(response, creds, key, now):
    state = client_complete(response, key, creds, now)
    data = state.encode()
    assert state.cert_url == response.cert_url
    assert codec.encode_entity(response.certificate) not in data
    assert response.certificate.signature.value not in data
    assert len(data) < 1024
    assert ClientState.decode(data) == state


def test_complete_key_mismatch(response, creds, session_keys, now):
    with pytest.raises(KeyMismatch):
        client_complete(response, session_keys[crypto.CURVE_160][3], creds, now)


def test_complete_expired(response, creds, key):
    after = response.certificate.valid_not_after + 1
    with pytest.raises(Expired):
        client_complete(response, key, creds, after)


def test_request_decodes_to_itself(creds, key):
    req = client_build_request(creds, key, "mobile")
    assert codec.decode_entity(codec.encode_entity(req), CertificateRequest) == req
