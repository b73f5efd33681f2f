"""Delegated certificate validation.

The responder takes a certificate (or the URL of one), does all the work a
constrained client cannot afford - CA signature, validity period, profile
processing rules, issuance check against the repository, revocation against
the latest CRL - and returns a short signed verdict. The client only checks
that verdict's signature, nonce and freshness (:func:`client_validate`).
"""

from __future__ import annotations

import enum
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Optional, Union

from . import codec, crypto, net, profiles
from .authority import RevocationList
from .codec import Field, TIME, U8, U64, Blob, Text
from .crypto import SIGNATURE, KeyPair, SignatureValue
from .errors import (
    BadUrl,
    ConfigError,
    CrlUnavailable,
    InvariantViolation,
    KindMismatch,
    Malformed,
    NoCrlYet,
    NotFound,
    OcspUnreachable,
    RepositoryUnavailable,
    RepositoryUnreachable,
)
from .profiles import ShortLivedCertificate, WirelessCertificate
from .repository import CertURL

log = logging.getLogger(__name__)

DEFAULT_PORT = 7003
NONCE_LENGTH = 16
DEFAULT_FRESHNESS = 60


class Status(enum.IntEnum):
    GOOD = 0
    REVOKED = 1
    UNKNOWN = 2


_WIRELESS_TAGS = WirelessCertificate.allowed_tags()
_SHORT_TAGS = ShortLivedCertificate.allowed_tags()

Target = Union[WirelessCertificate, ShortLivedCertificate, str]


@codec.register
@dataclass(frozen=True)
class StatusRequest(codec.Entity):
    """A certificate (flattened) or a certificate URL, plus a nonce.

    The target variant is recognisable from its tags: ``cert-url`` marks a
    URL, ``public-key-type`` a short-lived certificate, ``serial`` a
    wireless certificate.
    """

    KIND = 0x08
    FIELDS = (Field(0x53, "nonce", Blob(size=NONCE_LENGTH)),)

    target: Target
    nonce: bytes

    def validate(self):
        if isinstance(self.target, str):
            CertURL.parse(self.target)
        elif isinstance(self.target, (WirelessCertificate, ShortLivedCertificate)):
            self.target.validate()
        else:
            raise InvariantViolation(f"unsupported target {type(self.target).__name__}")
        super().validate()

    def tlv_fields(self):
        if isinstance(self.target, str):
            target = [(0x50, self.target.encode("utf-8"))]
        else:
            target = self.target.tlv_fields()
        return target + super().tlv_fields()

    @classmethod
    def allowed_tags(cls):
        return _WIRELESS_TAGS | _SHORT_TAGS | {0x50, 0x53}

    @classmethod
    def from_tlv(cls, values):
        if 0x53 not in values:
            raise Malformed("StatusRequest: missing nonce")
        nonce = Blob(size=NONCE_LENGTH).decode(values[0x53])
        rest = {t: v for t, v in values.items() if t != 0x53}
        if 0x50 in rest:
            if len(rest) != 1:
                raise Malformed("StatusRequest: URL target mixed with certificate fields")
            url = Text(min_bytes=1).decode(rest[0x50])
            try:
                return cls(url, nonce)
            except BadUrl as exc:
                raise Malformed(str(exc)) from None
        if 0x21 in rest:
            if not rest.keys() <= _SHORT_TAGS:
                raise Malformed("StatusRequest: stray fields in short-lived target")
            return cls(ShortLivedCertificate.from_tlv(rest), nonce)
        if not rest.keys() <= _WIRELESS_TAGS:
            raise Malformed("StatusRequest: stray fields in certificate target")
        return cls(WirelessCertificate.from_tlv(rest), nonce)


def new_nonce() -> bytes:
    return os.urandom(NONCE_LENGTH)


@codec.register
@dataclass(frozen=True, kw_only=True)
class StatusResponse(profiles._Signed):
    KIND = 0x09
    FIELDS = (
        Field(0x02, "serial", U64),
        Field(0x20, "signature", SIGNATURE),
        Field(0x51, "status", U8),
        Field(0x52, "produced_at", TIME),
        Field(0x53, "nonce", Blob(size=NONCE_LENGTH)),
        Field(0x54, "failure_detail", Text(min_bytes=1), True),
    )

    status: Status
    serial: int
    produced_at: int
    nonce: bytes
    signature: SignatureValue
    failure_detail: Optional[str] = None

    def check_invariants(self):
        try:
            object.__setattr__(self, "status", Status(self.status))
        except ValueError:
            raise InvariantViolation(f"unknown status {self.status!r}") from None
        if (self.status == Status.GOOD) != (self.failure_detail is None):
            raise InvariantViolation("failure_detail is present exactly when status is not good")


class Verdict(NamedTuple):
    ok: bool
    reason: str

    def __bool__(self):
        return self.ok


def client_validate(resp: StatusResponse, expected_nonce: bytes, responder_key,
                    now: Optional[int] = None, freshness_s: int = DEFAULT_FRESHNESS) -> Verdict:
    """Accept a response only if signed, echoing our nonce, fresh, and good."""
    now = int(time.time()) if now is None else now
    if not profiles.verify_signature(resp, responder_key):
        return Verdict(False, "bad-signature")
    if resp.nonce != expected_nonce:
        return Verdict(False, "nonce-mismatch")
    if abs(now - resp.produced_at) > freshness_s:
        return Verdict(False, "stale")
    if resp.status != Status.GOOD:
        return Verdict(False, f"status-{resp.status.name.lower()}")
    return Verdict(True, "good")


class _Finding(NamedTuple):
    status: Status
    serial: int
    detail: Optional[str]


class Responder:
    """Signs status verdicts for certificates issued by one CA.

    ``repository`` is anything with ``fetch_certificate(url)``,
    ``fetch_by_serial(serial)`` and ``fetch_latest_crl()``: a local
    Repository or a RemoteRepository.

    The latest CRL is re-fetched when the cached copy is older than
    ``crl_refresh_s`` (0: on every request that needs it). If the repository
    cannot be reached, the cached copy keeps serving until its next_update,
    and certificates already confirmed as issued stay confirmed.
    """

    def __init__(self, keypair: KeyPair, certificate: WirelessCertificate,
                 ca_public_key: bytes, repository, *, crl_refresh_s: int = 0,
                 short_lived_max_s: int = profiles.SHORT_LIVED_MAX, clock=time.time):
        if certificate.public_key_info != keypair.public_info:
            raise ConfigError("responder certificate does not match responder key")
        if not (certificate.extended_key_usage or 0) & profiles.EKU_OCSP_SIGNING:
            raise ConfigError("responder certificate lacks the ocspSigning purpose")
        if not profiles.verify_signature(certificate, ca_public_key):
            raise ConfigError("responder certificate is not signed by the CA")
        self.keypair = keypair
        self.certificate = certificate
        self.ca_public_key = ca_public_key
        self.repository = repository
        self.crl_refresh_s = crl_refresh_s
        self.short_lived_max_s = short_lived_max_s
        self.clock = clock
        self._crl: Optional[RevocationList] = None
        self._crl_fetched_at = 0.0
        self._crl_lock = threading.Lock()
        # serial -> certificate confirmed against the repository; lets the
        # issuance check survive a repository outage like the CRL does
        self._issued: dict[int, WirelessCertificate] = {}

    @property
    def public_key(self) -> bytes:
        return self.keypair.public_key

    def current_crl(self, now: int) -> RevocationList:
        cached, fetched_at = self._crl, self._crl_fetched_at
        if cached is not None and now <= cached.next_update and \
                self.clock() - fetched_at < self.crl_refresh_s:
            return cached
        with self._crl_lock:
            try:
                fresh = self.repository.fetch_latest_crl()
            except (RepositoryUnavailable, NoCrlYet, Malformed) as exc:
                log.warning("CRL fetch failed: %s", exc)
                fresh = None
            if fresh is not None:
                if not profiles.verify_signature(fresh, self.ca_public_key):
                    log.warning("ignoring CRL with a bad signature")
                elif self._crl is None or fresh.this_update >= self._crl.this_update:
                    # single reference swap: readers see the old list or the new one
                    self._crl = fresh
                    self._crl_fetched_at = self.clock()
            cached = self._crl
        if cached is None or now > cached.next_update:
            raise CrlUnavailable("no current CRL available")
        return cached

    def _resolve(self, target: Target) -> Union[WirelessCertificate, ShortLivedCertificate, _Finding]:
        if not isinstance(target, str):
            return target
        try:
            serial = CertURL.parse(target).serial
        except BadUrl:
            return _Finding(Status.UNKNOWN, 0, "bad-url")
        try:
            return self.repository.fetch_certificate(target)
        except NotFound:
            return _Finding(Status.UNKNOWN, serial, "not-found")
        except RepositoryUnavailable as exc:
            raise RepositoryUnreachable(str(exc)) from None
        except Malformed:
            return _Finding(Status.UNKNOWN, serial, "malformed")

    def assess(self, target: Target, now: int) -> _Finding:
        cert = self._resolve(target)
        if isinstance(cert, _Finding):
            return cert
        if isinstance(cert, ShortLivedCertificate):
            return self._assess_short_lived(cert, now)
        serial = cert.serial
        if not profiles.verify_signature(cert, self.ca_public_key):
            return _Finding(Status.UNKNOWN, serial, "bad-signature")
        if not profiles.validate_period(cert, now):
            return _Finding(Status.UNKNOWN, serial, "outside-validity-period")
        report = profiles.check_process(cert)
        if not report:
            return _Finding(Status.UNKNOWN, serial, "non-conformant:" + ",".join(
                sorted(report.fields())))
        if not isinstance(target, str):
            try:
                issued = self.repository.fetch_by_serial(serial)
            except NotFound:
                return _Finding(Status.UNKNOWN, serial, "never-issued")
            except RepositoryUnavailable as exc:
                issued = self._issued.get(serial)
                if issued is None:
                    raise RepositoryUnreachable(str(exc)) from None
            if issued != cert:
                return _Finding(Status.UNKNOWN, serial, "not-the-issued-certificate")
        self._issued[serial] = cert
        entry = self.current_crl(now).lookup(serial)
        if entry is not None:
            return _Finding(Status.REVOKED, serial, f"revoked:{entry.reason.name.lower()}")
        return _Finding(Status.GOOD, serial, None)

    def _assess_short_lived(self, cert: ShortLivedCertificate, now: int) -> _Finding:
        # short-lived certificates carry no serial and are never revoked; they expire
        if not profiles.verify_signature(cert, self.ca_public_key):
            return _Finding(Status.UNKNOWN, 0, "bad-signature")
        if not profiles.validate_period(cert, now):
            return _Finding(Status.UNKNOWN, 0, "outside-validity-period")
        if cert.valid_not_after - cert.valid_not_before > self.short_lived_max_s:
            return _Finding(Status.UNKNOWN, 0, "lifetime-too-long")
        return _Finding(Status.GOOD, 0, None)

    def respond(self, req: StatusRequest, now: Optional[int] = None) -> StatusResponse:
        now = int(self.clock()) if now is None else int(now)
        finding = self.assess(req.target, now)
        unsigned = StatusResponse(
            status=finding.status,
            serial=finding.serial,
            produced_at=now,
            nonce=req.nonce,
            failure_detail=finding.detail,
            signature=SignatureValue(crypto.ECDSA_SHA256, b""),
        )
        return profiles.sign_entity(unsigned, self.keypair)

    def dispatch(self, kind: int, payload: bytes):
        if kind != StatusRequest.KIND:
            raise KindMismatch(f"the OCSP responder does not handle {codec.KINDS[kind]}")
        return self.respond(codec.decode_entity(payload, StatusRequest))

    def serve(self, address: net.Address = ("127.0.0.1", DEFAULT_PORT)) -> net.FramedServer:
        return net.FramedServer(address, self.dispatch, name="ocsp")


def provision_responder(ca, state_dir, now: Optional[int] = None,
                        subject: str = "WPKI OCSP Responder") -> tuple[KeyPair, WirelessCertificate]:
    """Create (or load) the responder identity under ``state_dir/ocsp``.

    The responder gets its own key, certified by ``ca`` for ocspSigning only.
    """
    ocsp_dir = Path(state_dir) / "ocsp"
    key_path, cert_path = ocsp_dir / "key", ocsp_dir / "cert"
    if key_path.exists() and cert_path.exists():
        return load_identity(state_dir)
    ocsp_dir.mkdir(parents=True, exist_ok=True)
    keypair = crypto.generate_keypair(ca.config.curve_id)
    cert, _ = ca.issue_service_certificate(subject, keypair.public_info,
                                           profiles.EKU_OCSP_SIGNING, now)
    cert_path.write_bytes(codec.encode_entity(cert))
    key_path.write_bytes(bytes([keypair.curve_id]) + keypair.private_key)
    return keypair, cert


def load_identity(state_dir) -> tuple[KeyPair, WirelessCertificate]:
    ocsp_dir = Path(state_dir) / "ocsp"
    try:
        raw = (ocsp_dir / "key").read_bytes()
        cert = codec.decode_entity((ocsp_dir / "cert").read_bytes(), WirelessCertificate)
    except FileNotFoundError as exc:
        raise ConfigError(f"no responder identity in {ocsp_dir}: {exc.filename}") from None
    if len(raw) < 2:
        raise ConfigError(f"{ocsp_dir / 'key'}: too short")
    return crypto.keypair_from_private(raw[0], raw[1:]), cert


def query(address: net.Address, target: Target, *, meter: Optional[net.TrafficMeter] = None,
          peer: str = "ocsp", timeout: float = net.DEFAULT_TIMEOUT,
          error=None) -> tuple[StatusResponse, bytes]:
    """Send one StatusRequest; returns the response and the nonce used."""
    nonce = new_nonce()
    with net.Connection(address, peer=peer, meter=meter, timeout=timeout,
                        error=error or OcspUnreachable) as conn:
        resp = conn.call(StatusRequest(target, nonce), StatusResponse)
    return resp, nonce


