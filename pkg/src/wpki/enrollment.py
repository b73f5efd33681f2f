"""Certificate enrollment: registration, authenticated request with proof of
possession, issuance, and hand-over of the certificate URL.

Message flow (one framed connection to the CA is enough)::

    client                          CA
      RegistrationRequest(device)  ->
                                   <-  Credentials(username, password, code)
      CertificateRequest           ->      verify record, MAC, PoP; issue
                                   <-  CertificateResponse(cert, cert_url)

The request is signed with the new private key (proof of possession) and
MAC'd with a key derived from the credentials; the password itself is never
sent back to the CA. Credentials travel in-band here as a stand-in for an
out-of-band bootstrap channel.
"""

from __future__ import annotations

import re
import time
from dataclasses import dataclass
from typing import Optional

from . import codec, crypto, profiles
from .authority import (
    CertificationAuthority,
    RegistrationRecord,
    _CODE_ALPHABET,
    _PASSWORD_ALPHABET,
    random_text,
)
from .codec import Field, Text
from .crypto import KEY_INFO, MAC_TAG, SIGNATURE, KeyPair, PublicKeyInfo, SignatureValue
from .errors import (
    EmptyDeviceId,
    Expired,
    InvalidKey,
    InvalidKeypair,
    InvariantViolation,
    KeyMismatch,
    MacMismatch,
    Malformed,
    NonConformant,
    PopFailure,
    UnknownReference,
    MalformedKey,
    MalformedSignature,
)
from .profiles import WirelessCertificate

MAX_DEVICE_ID = 64
_RANDOM_CODE = re.compile(r"^[A-Z0-9]{16}$")


@codec.register
@dataclass(frozen=True)
class RegistrationRequest(codec.Entity):
    KIND = 0x01
    FIELDS = (Field(0x33, "device_id", Text(MAX_DEVICE_ID, min_bytes=1)),)

    device_id: str


@codec.register
@dataclass(frozen=True)
class Credentials(codec.Entity):
    KIND = 0x02
    FIELDS = (
        Field(0x30, "username", Text(min_bytes=1)),
        Field(0x34, "random_code", Text(min_bytes=1)),
        Field(0x35, "password", Text(min_bytes=1)),
    )

    username: str
    password: str
    random_code: str

    def check_invariants(self):
        if not _RANDOM_CODE.match(self.random_code):
            raise InvariantViolation("random_code must be 16 characters from [A-Z0-9]")

    def mac_key(self) -> bytes:
        return crypto.derive_mac_key(self.username, self.password, self.random_code)


@codec.register
@dataclass(frozen=True, kw_only=True)
class CertificateRequest(codec.Entity):
    KIND = 0x03
    FIELDS = (
        Field(0x07, "subject", Text(min_bytes=1)),
        Field(0x08, "public_key_info", KEY_INFO),
        Field(0x30, "reference_number", Text(min_bytes=1)),
        Field(0x31, "pop_signature", SIGNATURE),
        Field(0x32, "request_mac", MAC_TAG),
    )

    reference_number: str
    subject: str
    public_key_info: PublicKeyInfo
    pop_signature: SignatureValue
    request_mac: bytes

    def pop_message(self) -> bytes:
        """Canonical encoding of (reference_number, subject, public_key_info)."""
        return _pop_message(self.reference_number, self.subject, self.public_key_info)

    def mac_message(self) -> bytes:
        return self.pop_message() + codec.encode_tlv([(0x31, SIGNATURE.encode(self.pop_signature))])


def _pop_message(reference: str, subject: str, key: PublicKeyInfo) -> bytes:
    return codec.encode_tlv([
        (0x07, subject.encode("utf-8")),
        (0x08, KEY_INFO.encode(key)),
        (0x30, reference.encode("utf-8")),
    ])


_CERT_TAGS = WirelessCertificate.allowed_tags()


@codec.register
@dataclass(frozen=True)
class CertificateResponse(codec.Entity):
    """The issued certificate's fields, flattened, followed by its URL."""

    KIND = 0x04
    FIELDS = (Field(0x50, "cert_url", Text(min_bytes=1)),)

    certificate: WirelessCertificate
    cert_url: str

    def validate(self):
        if not isinstance(self.certificate, WirelessCertificate):
            raise InvariantViolation("certificate must be a WirelessCertificate")
        self.certificate.validate()
        super().validate()

    def tlv_fields(self):
        return self.certificate.tlv_fields() + super().tlv_fields()

    @classmethod
    def allowed_tags(cls):
        return _CERT_TAGS | {0x50}

    @classmethod
    def from_tlv(cls, values):
        cert = WirelessCertificate.from_tlv({t: v for t, v in values.items() if t in _CERT_TAGS})
        if 0x50 not in values:
            raise Malformed("CertificateResponse: missing cert-url")
        return cls(cert, Text().decode(values[0x50]))


@dataclass(frozen=True)
class VerifiedRequest:
    request: CertificateRequest
    record: RegistrationRecord


@dataclass(frozen=True)
class ClientState:
    """What the constrained client keeps after enrollment: key, credentials, URL."""

    FIELDS = (
        Field(0x30, "username", Text(min_bytes=1)),
        Field(0x34, "random_code", Text(min_bytes=1)),
        Field(0x35, "password", Text(min_bytes=1)),
        Field(0x50, "cert_url", Text(min_bytes=1)),
        Field(0x60, "private_key", codec.Blob()),
    )

    keypair: KeyPair
    credentials: Credentials
    cert_url: str

    def encode(self) -> bytes:
        k = self.keypair
        c = self.credentials
        return codec.encode_tlv([
            (0x30, c.username.encode("utf-8")),
            (0x34, c.random_code.encode("utf-8")),
            (0x35, c.password.encode("utf-8")),
            (0x50, self.cert_url.encode("utf-8")),
            (0x60, bytes([k.curve_id]) + k.private_key),
        ])

    @classmethod
    def decode(cls, data: bytes) -> "ClientState":
        values = codec.decode_tlv(data)
        if set(values) != {f.tag for f in cls.FIELDS}:
            raise Malformed("client state: unexpected field set")
        fields = {f.name: f.codec.decode(values[f.tag]) for f in cls.FIELDS}
        raw_key = fields["private_key"]
        if len(raw_key) < 2:
            raise Malformed("client state: private key too short")
        try:
            keypair = crypto.keypair_from_private(raw_key[0], raw_key[1:])
        except InvalidKey as exc:
            raise Malformed(f"client state: {exc}") from None
        creds = Credentials(fields["username"], fields["password"], fields["random_code"])
        return cls(keypair, creds, fields["cert_url"])


# -- client side --------------------------------------------------------------

def client_begin_registration(device_id: str) -> RegistrationRequest:
    if not device_id:
        raise EmptyDeviceId("device id is empty")
    if len(device_id.encode("utf-8")) > MAX_DEVICE_ID:
        raise EmptyDeviceId(f"device id longer than {MAX_DEVICE_ID} bytes")
    return RegistrationRequest(device_id)


def client_build_request(creds: Credentials, keypair: KeyPair, subject: str) -> CertificateRequest:
    try:
        crypto.check_keypair(keypair)
    except InvalidKey as exc:
        raise InvalidKeypair(str(exc)) from None
    key = keypair.public_info
    message = _pop_message(creds.username, subject, key)
    pop = crypto.sign(message, keypair)
    mac_input = message + codec.encode_tlv([(0x31, SIGNATURE.encode(pop))])
    return CertificateRequest(
        reference_number=creds.username,
        subject=subject,
        public_key_info=key,
        pop_signature=pop,
        request_mac=crypto.mac(creds.mac_key(), mac_input),
    )


def client_complete(resp: CertificateResponse, expected_key: KeyPair, creds: Credentials,
                    now: Optional[int] = None) -> ClientState:
    """Check the issued certificate, then keep only what the client needs.

    The certificate itself is dropped; later transactions present the URL.
    """
    cert = resp.certificate
    if cert.public_key_info != expected_key.public_info:
        raise KeyMismatch("certificate does not carry the requested public key")
    report = profiles.check_process(cert)
    if not report:
        raise NonConformant("; ".join(f"{v.field}:{v.rule}" for v in report.violations))
    now = int(time.time()) if now is None else now
    if not profiles.validate_period(cert, now):
        raise Expired(f"certificate valid {cert.valid_not_before}..{cert.valid_not_after}, now {now}")
    return ClientState(expected_key, creds, resp.cert_url)


# -- CA side ------------------------------------------------------------------

def ca_handle_registration(ca: CertificationAuthority, req: RegistrationRequest) -> Credentials:
    password = random_text(_PASSWORD_ALPHABET)
    random_code = random_text(_CODE_ALPHABET)
    with ca.store.locked() as store:
        username = store.next_username()
        store.add_registration(RegistrationRecord(
            username=username,
            password_derivative=crypto.derive_mac_key(username, password, random_code),
            random_code=random_code,
            device_id=req.device_id,
        ))
    return Credentials(username, password, random_code)


def ca_verify_request(ca: CertificationAuthority, req: CertificateRequest) -> VerifiedRequest:
    """Check, in order: registration record, request MAC, proof of possession."""
    with ca.store.locked() as store:
        record = store.registrations.get(req.reference_number)
    if record is None or record.consumed:
        raise UnknownReference(f"no open registration for {req.reference_number!r}")
    if not crypto.mac_verify(record.password_derivative, req.mac_message(), req.request_mac):
        raise MacMismatch("request MAC does not verify under the registered credentials")
    try:
        possessed = crypto.verify(req.pop_message(), req.pop_signature, req.public_key_info)
    except (MalformedKey, MalformedSignature) as exc:
        raise PopFailure(str(exc)) from None
    if not possessed:
        raise PopFailure("proof-of-possession signature does not verify")
    return VerifiedRequest(req, record)


def ca_issue(ca: CertificationAuthority, verified: VerifiedRequest,
             now: Optional[int] = None) -> CertificateResponse:
    req = verified.request
    username = verified.record.username

    with ca.store.locked() as store:
        # re-checked under the lock: two racing requests must not both issue
        if store.registrations[username].consumed:
            raise UnknownReference(f"registration {username!r} already used")
        cert, url = ca.issue(ca.default_template(req.subject), req.public_key_info, now,
                             on_stored=lambda s: s.consume_registration(username))
    return CertificateResponse(cert, url)
