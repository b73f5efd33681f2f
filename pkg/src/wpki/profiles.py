"""Compact certificate profiles for constrained clients.

Two certificate types live here:

* :class:`WirelessCertificate` - a trimmed X.509v3-style certificate. The
  fields the profile marks "not recommended" or "not defined" have no
  representation at all, so they cannot be constructed or decoded.
* :class:`ShortLivedCertificate` - a nine-field server certificate with a
  validity of at most one day, carrying an ECDH key.

:data:`PROFILE_RULES` is the field table the conformance checkers run on.
Each row gives the generation rule (what an issuer must put in) and the
process rule (what a verifier must examine): ``m`` mandatory, ``o``
optional, ``x`` not recommended, ``-`` not defined.
"""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, NamedTuple, Optional, Union
from urllib.parse import urlsplit

from . import codec, crypto
from .codec import Field, TIME, U8, U64, Text, TextList, Blob
from .crypto import KEY_INFO, SIGNATURE, KeyPair, PublicKeyInfo, SignatureValue
from .errors import (
    InvariantViolation,
    LifetimeTooLong,
    Malformed,
    NonConformantTemplate,
    SigningFailure,
    InvalidKey,
    UnsupportedCurve,
)

SIGNATURE_TAG = 0x20

X509_V3 = 3

# key usage bits
KU_DIGITAL_SIGNATURE = 0x01
KU_KEY_ENCIPHERMENT = 0x02
KU_KEY_CERT_SIGN = 0x04
KU_CRL_SIGN = 0x08

# extended key usage bits
EKU_CLIENT_AUTH = 0x01
EKU_SERVER_AUTH = 0x02
EKU_OCSP_SIGNING = 0x04

DEFAULT_SHORT_LIVED_LIFETIME = 3600
SHORT_LIVED_MAX = 86400
DEFAULT_POLICY = "wpki-basic-assurance"


class Rule(NamedTuple):
    field: str
    generation: str
    process: str
    attributes: tuple[str, ...]


# The profile table, row for row. ``attributes`` names the WirelessCertificate
# attributes realizing the row; rows with no attributes cannot be represented.
PROFILE_RULES: tuple[Rule, ...] = (
    Rule("version", "m", "m", ("version",)),
    Rule("serial_number", "m", "m", ("serial",)),
    Rule("signature", "m", "m", ("signature_algorithm_id",)),
    Rule("issuer", "m", "m", ("issuer",)),
    Rule("validity", "m", "m", ("valid_not_before", "valid_not_after")),
    Rule("subject", "m", "m", ("subject",)),
    Rule("subject_public_key_info", "m", "m", ("public_key_info",)),
    Rule("issuer_unique_identifier", "x", "x", ()),
    Rule("subject_unique_identifier", "x", "x", ()),
    Rule("authority_key_id", "m", "o", ("authority_key_id",)),
    Rule("subject_key_id", "m", "o", ("subject_key_id",)),
    Rule("key_usage", "m", "m", ("key_usage",)),
    Rule("private_key_usage_period", "x", "x", ()),
    Rule("certificate_policy", "m", "m", ("certificate_policy",)),
    Rule("policy_mapping", "-", "-", ()),
    Rule("subject_alt_names", "m", "m", ("subject_alt_names",)),
    Rule("issuer_alt_names", "o", "m", ("issuer_alt_names",)),
    Rule("subject_directory_attributes", "x", "x", ()),
    Rule("basic_constraints", "x", "x", ()),
    Rule("name_constraints", "-", "-", ()),
    Rule("policy_constraints", "-", "-", ()),
    Rule("extended_key_usage", "o", "m", ("extended_key_usage",)),
    Rule("crl_distribution_points", "m", "o", ("crl_distribution_points",)),
    Rule("domain_information", "o", "o", ("domain_information",)),
    Rule("authority_info_access", "m", "o", ("authority_info_access",)),
)

RULES_BY_FIELD = {r.field: r for r in PROFILE_RULES}
EXTENSION_FIELDS = tuple(r.field for r in PROFILE_RULES[9:] if r.attributes)
BASIC_FIELDS = tuple(r.field for r in PROFILE_RULES[:9] if r.attributes)

MISSING_MANDATORY = "missing-mandatory"
FORBIDDEN_PRESENT = "forbidden-present"
UNDEFINED_PRESENT = "undefined-present"
MALFORMED = "malformed"


class Violation(NamedTuple):
    field: str
    rule: str
    detail: str


@dataclass(frozen=True)
class ConformanceReport:
    mode: str
    violations: tuple[Violation, ...] = ()

    @property
    def conformant(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.conformant

    def fields(self, rule: Optional[str] = None) -> set[str]:
        return {v.field for v in self.violations if rule is None or v.rule == rule}


class _Const(codec.ValueCodec):
    """A field whose only legal value is ``value``, stored as one byte."""

    def __init__(self, value: Any, byte: int):
        self.value = value
        self.byte = bytes([byte])

    def check(self, value, name):
        if value != self.value:
            raise InvariantViolation(f"{name}: must be {self.value!r}")

    def encode(self, value):
        return self.byte

    def decode(self, raw):
        if raw != self.byte:
            raise Malformed(f"expected {self.byte.hex()}, got {bytes(raw).hex()}")
        return self.value


_KEY_ID = Blob(size=crypto.KEY_ID_LENGTH)
_NAME = Text(min_bytes=1)


class _Signed(codec.Entity):
    """Entities carrying a signature over everything else they contain."""

    def tbs(self) -> bytes:
        return codec.encode_tlv(p for p in self.tlv_fields() if p[0] != SIGNATURE_TAG)


@codec.register
@dataclass(frozen=True, kw_only=True)
class WirelessCertificate(_Signed):
    KIND = 0x05
    FIELDS = (
        Field(0x01, "version", U8),
        Field(0x02, "serial", U64),
        Field(0x03, "signature_algorithm_id", U8),
        Field(0x04, "issuer", _NAME),
        Field(0x05, "valid_not_before", TIME),
        Field(0x06, "valid_not_after", TIME),
        Field(0x07, "subject", _NAME),
        Field(0x08, "public_key_info", KEY_INFO),
        Field(0x10, "authority_key_id", _KEY_ID, True),
        Field(0x11, "subject_key_id", _KEY_ID, True),
        Field(0x12, "key_usage", U8, True),
        Field(0x13, "certificate_policy", Text(), True),
        Field(0x14, "subject_alt_names", TextList(), True),
        Field(0x15, "issuer_alt_names", TextList(), True),
        Field(0x16, "extended_key_usage", U8, True),
        Field(0x17, "crl_distribution_points", Text(), True),
        Field(0x18, "domain_information", Text(), True),
        Field(0x19, "authority_info_access", Text(), True),
        Field(0x20, "signature", SIGNATURE),
    )

    version: int
    serial: int
    signature_algorithm_id: int
    issuer: str
    valid_not_before: int
    valid_not_after: int
    subject: str
    public_key_info: PublicKeyInfo
    signature: SignatureValue
    authority_key_id: Optional[bytes] = None
    subject_key_id: Optional[bytes] = None
    key_usage: Optional[int] = None
    certificate_policy: Optional[str] = None
    subject_alt_names: Optional[tuple[str, ...]] = None
    issuer_alt_names: Optional[tuple[str, ...]] = None
    extended_key_usage: Optional[int] = None
    crl_distribution_points: Optional[str] = None
    domain_information: Optional[str] = None
    authority_info_access: Optional[str] = None

    def check_invariants(self):
        if self.valid_not_before >= self.valid_not_after:
            raise InvariantViolation("valid_not_before must precede valid_not_after")

    def present_fields(self) -> set[str]:
        present = set(BASIC_FIELDS)
        for name in EXTENSION_FIELDS:
            if getattr(self, name) is not None:
                present.add(name)
        return present


@codec.register
@dataclass(frozen=True, kw_only=True)
class ShortLivedCertificate(_Signed):
    KIND = 0x06
    FIELDS = (
        Field(0x01, "certificate_version", _Const("V1", 0x00)),
        Field(0x03, "signature_algorithm_id", U8),
        Field(0x04, "issuer", _NAME),
        Field(0x05, "valid_not_before", TIME),
        Field(0x06, "valid_not_after", TIME),
        Field(0x07, "subject", _NAME),
        Field(0x08, "public_key", Blob()),
        Field(0x20, "signature", SIGNATURE),
        Field(0x21, "public_key_type", _Const("ECDH", 0x01)),
        Field(0x22, "parameter_specifier", U8),
    )

    issuer: str
    valid_not_before: int
    valid_not_after: int
    subject: str
    parameter_specifier: int
    public_key: bytes
    signature: SignatureValue
    signature_algorithm_id: int = crypto.ECDSA_SHA256
    certificate_version: str = "V1"
    public_key_type: str = "ECDH"

    def check_invariants(self):
        if self.signature_algorithm_id != crypto.ECDSA_SHA256:
            raise InvariantViolation("short-lived certificates are ECDSA with SHA only")
        if self.valid_not_before >= self.valid_not_after:
            raise InvariantViolation("valid_not_before must precede valid_not_after")
        if self.valid_not_after - self.valid_not_before > SHORT_LIVED_MAX:
            raise InvariantViolation(f"lifetime exceeds {SHORT_LIVED_MAX} s")
        if self.parameter_specifier == crypto.RSA1024_PLACEHOLDER:
            raise InvariantViolation("parameter_specifier must name an EC curve")
        try:
            expected = crypto.public_key_length(self.parameter_specifier)
        except UnsupportedCurve:
            raise InvariantViolation(
                f"unregistered curve {self.parameter_specifier!r}"
            ) from None
        if len(self.public_key) != expected:
            raise InvariantViolation(f"public_key must be {expected} bytes")

    @property
    def public_key_info(self) -> PublicKeyInfo:
        return PublicKeyInfo(self.parameter_specifier, self.public_key)


Certificate = Union[WirelessCertificate, ShortLivedCertificate]


# -- conformance --------------------------------------------------------------

def _present(cert_or_fields) -> set[str]:
    if isinstance(cert_or_fields, (WirelessCertificate, CertificateTemplate)):
        return cert_or_fields.present_fields()
    return set(cert_or_fields)


def _check(present: set[str], mode: str) -> list[Violation]:
    violations = []
    for rule in PROFILE_RULES:
        marker = getattr(rule, mode)
        here = rule.field in present
        if marker == "m" and not here:
            violations.append(Violation(rule.field, MISSING_MANDATORY, f"{mode}: field is mandatory"))
        elif marker == "x" and here:
            violations.append(Violation(rule.field, FORBIDDEN_PRESENT, f"{mode}: field is not recommended"))
        elif marker == "-" and here:
            violations.append(Violation(rule.field, UNDEFINED_PRESENT, f"{mode}: field is not defined"))
    for name in sorted(present - set(RULES_BY_FIELD)):
        violations.append(Violation(name, UNDEFINED_PRESENT, "not a profile field"))
    return violations


def check_generation(cert) -> ConformanceReport:
    """Issuer-side check. Accepts a certificate, a template or a field-name set."""
    return ConformanceReport("generation", tuple(_check(_present(cert), "generation")))


def _looks_like_url(text: str) -> bool:
    parts = urlsplit(text)
    return bool(parts.scheme) and bool(parts.netloc)


def check_process(cert) -> ConformanceReport:
    """Verifier-side check: process-mandatory fields present, optional ones well-formed."""
    violations = _check(_present(cert), "process")
    if isinstance(cert, WirelessCertificate):
        for name in ("crl_distribution_points", "authority_info_access"):
            value = getattr(cert, name)
            if value is not None and not _looks_like_url(value):
                violations.append(Violation(name, MALFORMED, f"not a URL: {value!r}"))
        if cert.domain_information is not None and not cert.domain_information.strip():
            violations.append(Violation("domain_information", MALFORMED, "blank"))
        if cert.version != X509_V3:
            violations.append(Violation("version", MALFORMED, f"version {cert.version}"))
        if cert.signature_algorithm_id != crypto.ECDSA_SHA256:
            violations.append(
                Violation("signature", MALFORMED, f"algorithm {cert.signature_algorithm_id}")
            )
    return ConformanceReport("process", tuple(violations))


# -- builders -----------------------------------------------------------------

@dataclass(frozen=True)
class CAIdentity:
    """What a builder needs to know about the issuing CA."""

    name: str
    keypair: KeyPair
    crl_url: str
    aia_url: str
    policy: str = DEFAULT_POLICY
    alt_names: Optional[tuple[str, ...]] = None


@dataclass(frozen=True)
class CertificateTemplate:
    """Subject-specific part of a certificate request.

    ``extensions`` maps profile field names to values and overrides the
    builder defaults; mapping a field to ``None`` suppresses it.
    """

    subject: str
    lifetime_s: int
    extensions: Mapping[str, Any] = dataclasses.field(default_factory=dict)

    def present_fields(self) -> set[str]:
        return set(BASIC_FIELDS) | {k for k, v in self.extensions.items() if v is not None}


def _default_extensions(template: CertificateTemplate, subject_key: PublicKeyInfo,
                        ca: CAIdentity) -> dict[str, Any]:
    return {
        "authority_key_id": crypto.key_id(ca.keypair.public_key),
        "subject_key_id": crypto.key_id(subject_key.point),
        "key_usage": KU_DIGITAL_SIGNATURE,
        "certificate_policy": ca.policy,
        "subject_alt_names": (template.subject,),
        "crl_distribution_points": ca.crl_url,
        "authority_info_access": ca.aia_url,
    }


def _now(now: Optional[int]) -> int:
    return int(time.time()) if now is None else int(now)


def sign_entity(unsigned, key: KeyPair):
    """Return ``unsigned`` with its signature field set over its tbs bytes."""
    try:
        sig = crypto.sign(unsigned.tbs(), key)
    except InvalidKey as exc:
        raise SigningFailure(str(exc)) from None
    return dataclasses.replace(unsigned, signature=sig)


_UNSIGNED = SignatureValue(crypto.ECDSA_SHA256, b"")


def build_certificate(template: CertificateTemplate, subject_key: PublicKeyInfo,
                      ca: CAIdentity, serial: int, now: Optional[int] = None) -> WirelessCertificate:
    extensions = _default_extensions(template, subject_key, ca)
    extensions.update(template.extensions)
    present = set(BASIC_FIELDS) | {k for k, v in extensions.items() if v is not None}
    report = check_generation(present)
    if not report:
        raise NonConformantTemplate(report)
    if template.lifetime_s <= 0:
        raise InvariantViolation("lifetime must be positive")
    start = _now(now)
    unsigned = WirelessCertificate(
        version=X509_V3,
        serial=serial,
        signature_algorithm_id=crypto.ECDSA_SHA256,
        issuer=ca.name,
        valid_not_before=start,
        valid_not_after=start + template.lifetime_s,
        subject=template.subject,
        public_key_info=subject_key,
        signature=_UNSIGNED,
        **{k: v for k, v in extensions.items() if v is not None},
    )
    return sign_entity(unsigned, ca.keypair)


def build_short_lived(subject: str, ecdh_public: PublicKeyInfo, lifetime_s: int,
                      ca: CAIdentity, now: Optional[int] = None,
                      max_lifetime_s: int = SHORT_LIVED_MAX) -> ShortLivedCertificate:
    if lifetime_s > max_lifetime_s:
        raise LifetimeTooLong(f"{lifetime_s} s exceeds the {max_lifetime_s} s maximum")
    start = _now(now)
    curve_id, point = ecdh_public
    unsigned = ShortLivedCertificate(
        issuer=ca.name,
        valid_not_before=start,
        valid_not_after=start + lifetime_s,
        subject=subject,
        parameter_specifier=curve_id,
        public_key=point,
        signature=_UNSIGNED,
    )
    return sign_entity(unsigned, ca.keypair)


def verify_signature(entity, issuer_key) -> bool:
    """Signature check for any signed entity; malformed material counts as invalid."""
    return crypto.verify_quiet(entity.tbs(), entity.signature, issuer_key)


def validate_period(cert, now: int) -> bool:
    return cert.valid_not_before <= now <= cert.valid_not_after

